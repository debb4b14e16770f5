#include "doctest.h"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "emokg/client.hpp"
#include "emokg/error.hpp"
#include "emokg/region.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace emokg;
using nlohmann::json;

namespace {

BackboneOutput two_patch_output() {
  BackboneOutput out;
  out.grid_h = 1;
  out.grid_w = 2;
  out.patch_features = Eigen::MatrixXd(2, 3);
  out.patch_features << 1, 2, 3, 4, 5, 6;
  out.cls_attentions[0] = Eigen::Vector2d(0.2, 0.8);
  out.cls_attentions[1] = Eigen::Vector2d(0.4, 0.6);
  return out;
}

BackboneOutput random_output(std::mt19937_64& rng, std::size_t gh, std::size_t gw, std::size_t dim, int layers) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.01, 1.0);
  BackboneOutput out;
  out.grid_h = gh;
  out.grid_w = gw;
  const auto n = static_cast<Eigen::Index>(gh * gw);
  out.patch_features = Eigen::MatrixXd(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < out.patch_features.size(); ++i) out.patch_features.data()[i] = n01(rng);
  for (int l = 0; l < layers; ++l) {
    Eigen::VectorXd a(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = u01(rng);
    out.cls_attentions[l] = a / a.sum();
  }
  return out;
}

}  // namespace

TEST_CASE("attention aggregation") {
  const auto out = two_patch_output();
  const auto m = aggregate_attention(out, {{0, 1}});
  CHECK(m(0) == doctest::Approx(0.3));
  CHECK(m(1) == doctest::Approx(0.7));
  CHECK(aggregate_attention(out, {{1}}) == out.cls_attentions.at(1));
  CHECK_THROWS_AS(aggregate_attention(out, {{0, 5}}), Error);
  CHECK(last_layers(out, 3).indices == std::vector<int>{0, 1});
}

TEST_CASE("attention mean matches recomputation") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto out = random_output(rng, 3, 4, 2, 3);
    const auto m = aggregate_attention(out, {{0, 1, 2}});
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double s = 0;
      for (int l = 0; l < 3; ++l) s += out.cls_attentions.at(l)(i);
      CHECK(std::abs(m(i) - s / 3.0) < 1e-12);
    }
  }
}

TEST_CASE("feature focusing") {
  const auto out = two_patch_output();
  CHECK(focus_features(out, Eigen::Vector2d::Ones()) == out.patch_features);
  CHECK(focus_features(out, Eigen::Vector2d::Zero()).isZero());
  const auto half = focus_features(out, Eigen::Vector2d(0.5, 1.0));
  CHECK(half.row(0) == 0.5 * out.patch_features.row(0));
  CHECK(half.row(1) == out.patch_features.row(1));
  CHECK_THROWS_AS(focus_features(out, Eigen::Vector3d::Ones()), Error);
}

TEST_CASE("decoder forward") {
  const auto zero = zero_decoder(3, 4, 8, 8);
  const auto map = predict_map(Eigen::MatrixXd::Zero(4, 3), 2, 2, zero);
  for (double v : map.data) CHECK(v == 0.5);

  const auto rnd = random_decoder(3, 4, 6, 5, 42);
  Eigen::MatrixXd f = Eigen::MatrixXd::Random(4, 3);
  CHECK(predict_map(f, 2, 2, rnd) == predict_map(f, 2, 2, random_decoder(3, 4, 6, 5, 42)));

  // one channel, identity activation, unit weights: logistic of the grid itself
  auto id = zero_decoder(1, 1, 3, 3, Activation::Identity);
  id.w1(0, 0) = 1.0;
  id.w2(0) = 1.0;
  Eigen::MatrixXd grid(9, 1);
  grid << -2, -1, 0, 0.5, 1, 1.5, 2, 3, -3;
  const auto m = predict_map(grid, 3, 3, id);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(std::abs(m.data[i] - 1.0 / (1.0 + std::exp(-grid(static_cast<Eigen::Index>(i), 0)))) < 1e-15);
}

TEST_CASE("decoder forward matches a per-pixel recomputation") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_decoder(5, 3, 11, 7, rng());
    Eigen::MatrixXd f = Eigen::MatrixXd::Random(12, 5);
    const auto got = predict_map(f, 3, 4, p);
    const auto want = oracle::decoder_forward(f, 3, 4, p);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
  }
}

TEST_CASE("decoder parameters flatten and serialize") {
  const auto p = random_decoder(4, 3, 5, 5, 1);
  CHECK(p.flatten().size() == p.parameter_count());
  auto q = zero_decoder(4, 3, 5, 5);
  q.unflatten(p.flatten());
  CHECK(q.flatten() == p.flatten());
  const auto r = decoder_from_json(to_json(p));
  CHECK(r.flatten() == p.flatten());
  CHECK(r.out_h == 5);
}

TEST_CASE("decoder gradient agrees with finite differences") {
  std::mt19937_64 rng(21);
  std::vector<TrainingSample> samples;
  for (int s = 0; s < 3; ++s) {
    TrainingSample ts{random_output(rng, 3, 3, 4, 2), Map2D(6, 6)};
    for (auto& v : ts.target.data) v = std::uniform_real_distribution<double>(0, 1)(rng);
    samples.push_back(std::move(ts));
  }
  const LayerSet layers{{0, 1}};
  // attention ~1/9 shrinks features; scale up so the tanh is not linear
  for (auto& s : samples) s.backbone.patch_features *= 9.0;
  const auto p = random_decoder(4, 5, 6, 6, 4);
  const auto lg = decoder_loss_and_gradient(p, samples, layers);
  auto f = [&](const std::vector<double>& theta) {
    auto q = p;
    q.unflatten(theta);
    return decoder_loss_and_gradient(q, samples, layers).loss;
  };
  const auto fd = oracle::finite_difference(f, p.flatten());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    num += (lg.gradient[i] - fd[i]) * (lg.gradient[i] - fd[i]);
    den += fd[i] * fd[i];
  }
  CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("training degenerate cases") {
  std::mt19937_64 rng(2);
  std::vector<TrainingSample> samples{{random_output(rng, 2, 2, 3, 1), Map2D(4, 4, 1.0)}};
  const auto init = random_decoder(3, 2, 4, 4, 9);
  const auto none = train_decoder(samples, {{0}}, 0, 0.5, init);
  CHECK(none.loss_trace.size() == 1);
  CHECK(none.params.flatten() == init.flatten());
  const auto still = train_decoder(samples, {{0}}, 5, 0.0, init);
  REQUIRE(still.loss_trace.size() == 6);
  for (double l : still.loss_trace) CHECK(l == still.loss_trace.front());
}

TEST_CASE("training halves the loss on a linearly recoverable blob") {
  std::mt19937_64 rng(17);
  const auto data = oracle::linear_blob_dataset(rng, 6, 4, 4, 16);
  const auto res = train_decoder(data, {{0, 1}}, 200, 2.0, random_decoder(4, 8, 16, 16, 3));
  CHECK(res.loss_trace.back() <= 0.5 * res.loss_trace.front());
}

TEST_CASE("postprocess examples") {
  Map2D m(10, 10, 0.1);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) m.at(y + 1, x + 1) = 0.9;  // 12 pixels
  for (int x = 0; x < 5; ++x) m.at(8, x + 5) = 0.8;         // 5 pixels
  const auto r = postprocess(m, 0.5);
  double sum = 0;
  for (double v : r.binary.data) sum += v;
  CHECK(sum == 12);
  REQUIRE(r.box);
  CHECK(*r.box == Box{1, 1, 4, 3});

  const auto empty = postprocess(Map2D(5, 5, 0.4), 0.5);
  CHECK_FALSE(empty.box);
  const auto full = postprocess(Map2D(5, 6, 1.0), 0.5);
  REQUIRE(full.box);
  CHECK(*full.box == Box{0, 0, 5, 4});
  CHECK(box_to_json(std::nullopt).is_null());
}

TEST_CASE("postprocess ties keep the earlier component") {
  Map2D m(4, 4, 0.0);
  m.at(0, 2) = m.at(0, 3) = 1.0;
  m.at(3, 0) = m.at(3, 1) = 1.0;
  const auto r = postprocess(m, 0.5);
  REQUIRE(r.box);
  CHECK(*r.box == Box{2, 0, 3, 0});
}

TEST_CASE("postprocess matches the flood-fill oracle") {
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 4 + rng() % 12, w = 4 + rng() % 12;
    const auto m = oracle::random_blobs_map(rng, h, w);
    const auto got = postprocess(m, 0.5);
    const auto want = oracle::largest_component(m, 0.5);
    for (std::size_t i = 0; i < h * w; ++i) CHECK(static_cast<int>(got.binary.data[i]) == want.mask[i]);
    CHECK(got.box.has_value() == want.has_box);
    if (want.has_box) CHECK(*got.box == Box{want.x0, want.y0, want.x1, want.y1});
  }
}

TEST_CASE("mask to latent") {
  Map2D m(8, 8, 0.0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) m.at(y, x) = 1.0;
  const auto l = mask_to_latent(m, 2, 2);
  CHECK(l.data == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("tiny backbone is deterministic and well formed") {
  TinyBackbone bb({.patch = 8, .dim = 16, .layers = 4, .heads = 2, .seed = 5});
  const auto img = fixture::toy_image(32, 3);
  const auto a = bb.run(img, {1, 2, 3});
  a.validate();
  CHECK(a.grid_h == 4);
  CHECK(a.patch_features.rows() == 16);
  CHECK(a.cls_attentions.size() == 3);
  for (const auto& [l, v] : a.cls_attentions) {
    CHECK(v.minCoeff() >= 0.0);
    CHECK(v.sum() <= 1.0 + 1e-12);
  }
  const auto b = bb.run(img, {1, 2, 3});
  CHECK(a.patch_features == b.patch_features);
  CHECK_THROWS_AS(bb.run(img, {7}), Error);
}

TEST_CASE("backbone output JSON and client protocol") {
  const auto out = two_patch_output();
  const auto back = backbone_output_from_json(to_json(out));
  CHECK(back.patch_features == out.patch_features);
  CHECK(back.cls_attentions.at(1) == out.cls_attentions.at(1));

  auto transport = std::make_shared<FunctionTransport>([&](const json& req) {
    CHECK(req.at("layers") == json{0, 1});
    CHECK(req.contains("image_path"));
    return to_json(out);
  });
  ClientBackbone client(transport, 2);
  const auto got = client.run(fixture::toy_image(16, 1), {0, 1});
  CHECK(got.patch_features == out.patch_features);

  auto bad = std::make_shared<FunctionTransport>([](const json&) { return json{{"grid", {3, 3}}}; });
  ClientBackbone broken(bad, 2);
  CHECK_THROWS_AS(broken.run(fixture::toy_image(16, 1), {0}), Error);
}

TEST_CASE("localize on synthetic blobs") {
  TinyBackbone bb;
  LocalizerConfig cfg;
  cfg.train_steps = 40;
  cfg.train_images = 6;
  const auto trained = train_on_synthetic(bb, cfg, 32);
  CHECK(trained.loss_trace.back() < trained.loss_trace.front());
  const auto again = train_on_synthetic(bb, cfg, 32);
  CHECK(again.params.flatten() == trained.params.flatten());
  const auto img = synthetic_blob_images(1, 32, 77)[0].image;
  const auto mask = localize(bb, img, trained.params, last_layers(bb.run(img, {0, 1, 2, 3}), 3), 0.5);
  CHECK(mask.binary.height == 32);
  CHECK(mask.binary.width == 32);
}

TEST_CASE("default training localizes held-out blobs") {
  TinyBackbone bb;
  const auto trained = train_on_synthetic(bb, LocalizerConfig{}, 32);
  double iou = 0;
  int boxes = 0;
  const auto held_out = synthetic_blob_images(20, 32, 1234);
  for (const auto& s : held_out) {
    const auto m = localize(bb, s.image, trained.params, LayerSet{}, 0.5);
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < m.binary.size(); ++i) {
      inter += m.binary.data[i] * s.region.data[i];
      uni += std::max(m.binary.data[i], s.region.data[i]);
    }
    iou += inter / uni;
    boxes += m.box ? 1 : 0;
  }
  CHECK(iou / 20 > 0.35);
  CHECK(boxes >= 14);
}
