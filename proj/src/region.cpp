#include "emokg/region.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <deque>
#include <filesystem>
#include <random>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/text.hpp"

namespace emokg {

using nlohmann::json;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void BackboneOutput::validate() const {
  const auto n = static_cast<Eigen::Index>(patches());
  if (n == 0) fail(Errc::ShapeMismatch, "backbone grid is empty");
  if (patch_features.rows() != n)
    fail(Errc::ShapeMismatch, "patch feature rows (" + std::to_string(patch_features.rows()) +
                                  ") do not match grid size " + std::to_string(n));
  for (const auto& [layer, a] : cls_attentions) {
    if (a.size() != n) fail(Errc::ShapeMismatch, "attention of layer " + std::to_string(layer) + " has wrong length");
    if ((a.array() < 0.0).any()) fail(Errc::InvalidArgument, "attention weights must be nonnegative");
    if (a.sum() > 1.0 + 1e-9) fail(Errc::InvalidArgument, "CLS-to-patch attention must sum to at most 1");
  }
}

LayerSet last_layers(const BackboneOutput& out, int count) {
  LayerSet s;
  for (auto it = out.cls_attentions.rbegin(); it != out.cls_attentions.rend() && count > 0; ++it, --count)
    s.indices.insert(s.indices.begin(), it->first);
  return s;
}

std::size_t DecoderParams::parameter_count() const { return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + 1); }

std::vector<double> DecoderParams::flatten() const {
  std::vector<double> v;
  v.reserve(parameter_count());
  for (Eigen::Index r = 0; r < w1.rows(); ++r)
    for (Eigen::Index c = 0; c < w1.cols(); ++c) v.push_back(w1(r, c));
  for (Eigen::Index i = 0; i < b1.size(); ++i) v.push_back(b1(i));
  for (Eigen::Index i = 0; i < w2.size(); ++i) v.push_back(w2(i));
  v.push_back(b2);
  return v;
}

void DecoderParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) fail(Errc::ShapeMismatch, "parameter vector has the wrong length");
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < w1.rows(); ++r)
    for (Eigen::Index c = 0; c < w1.cols(); ++c) w1(r, c) = values[k++];
  for (Eigen::Index i = 0; i < b1.size(); ++i) b1(i) = values[k++];
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2(i) = values[k++];
  b2 = values[k];
}

DecoderParams zero_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_h, std::size_t out_w,
                           Activation act) {
  DecoderParams p;
  p.activation = act;
  p.out_h = out_h;
  p.out_w = out_w;
  p.w1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(in_dim));
  p.b1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  p.w2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden));
  return p;
}

DecoderParams random_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_h, std::size_t out_w,
                             std::uint64_t seed, double scale, Activation act) {
  DecoderParams p = zero_decoder(in_dim, hidden, out_h, out_w, act);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double s1 = scale / std::sqrt(static_cast<double>(std::max<std::size_t>(in_dim, 1)));
  const double s2 = scale / std::sqrt(static_cast<double>(std::max<std::size_t>(hidden, 1)));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = s1 * n01(rng);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2(i) = s2 * n01(rng);
  return p;
}

json to_json(const DecoderParams& p) {
  return {{"activation", p.activation == Activation::Tanh ? "tanh" : "identity"},
          {"in_dim", p.in_dim()},
          {"hidden", p.hidden()},
          {"out_h", p.out_h},
          {"out_w", p.out_w},
          {"params", p.flatten()}};
}

DecoderParams decoder_from_json(const json& j) {
  try {
    const auto act = j.at("activation").get<std::string>() == "identity" ? Activation::Identity : Activation::Tanh;
    DecoderParams p = zero_decoder(j.at("in_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                                   j.at("out_h").get<std::size_t>(), j.at("out_w").get<std::size_t>(), act);
    p.unflatten(j.at("params").get<std::vector<double>>());
    return p;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed decoder parameters: ") + e.what());
  }
}

Eigen::VectorXd aggregate_attention(const BackboneOutput& out, const LayerSet& layers) {
  if (layers.indices.empty()) fail(Errc::LayerOutOfRange, "layer set is empty");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.patches()));
  for (int l : layers.indices) {
    const auto it = out.cls_attentions.find(l);
    if (it == out.cls_attentions.end()) fail(Errc::LayerOutOfRange, "layer " + std::to_string(l) + " not available");
    if (it->second.size() != sum.size()) fail(Errc::ShapeMismatch, "attention length does not match the grid");
    sum += it->second;
  }
  return sum / static_cast<double>(layers.indices.size());
}

Eigen::MatrixXd focus_features(const BackboneOutput& out, const Eigen::VectorXd& m_patch) {
  if (m_patch.size() != out.patch_features.rows())
    fail(Errc::ShapeMismatch, "patch map length does not match the number of patches");
  return m_patch.asDiagonal() * out.patch_features;
}

namespace {

Eigen::MatrixXd to_eigen(const InterpWeights& w, std::size_t cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < w.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w[r][c];
  return m;
}

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

struct Forward {
  Eigen::MatrixXd pre;     // N × hidden
  Eigen::MatrixXd hidden;  // N × hidden
  Eigen::MatrixXd y;       // out_h × out_w
};

Forward forward(const Eigen::MatrixXd& focused, std::size_t gh, std::size_t gw, const DecoderParams& p,
                const Eigen::MatrixXd& by, const Eigen::MatrixXd& bx) {
  if (static_cast<std::size_t>(focused.rows()) != gh * gw)
    fail(Errc::ShapeMismatch, "focused grid does not match (grid_h, grid_w)");
  if (static_cast<std::size_t>(focused.cols()) != p.in_dim())
    fail(Errc::ShapeMismatch, "feature dimension " + std::to_string(focused.cols()) + " does not match decoder input " +
                                  std::to_string(p.in_dim()));
  Forward f;
  f.pre = (focused * p.w1.transpose()).rowwise() + p.b1.transpose();
  f.hidden = p.activation == Activation::Tanh ? Eigen::MatrixXd(f.pre.array().tanh()) : f.pre;
  const Eigen::VectorXd z = (f.hidden * p.w2).array() + p.b2;
  const RowMajor zgrid = Eigen::Map<const RowMajor>(z.data(), static_cast<Eigen::Index>(gh), static_cast<Eigen::Index>(gw));
  const Eigen::MatrixXd u = by * zgrid * bx.transpose();
  f.y = u.unaryExpr([](double v) { return logistic(v); });
  return f;
}

Map2D to_map(const Eigen::MatrixXd& m) {
  Map2D out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return out;
}

}  // namespace

Map2D predict_map(const Eigen::MatrixXd& focused, std::size_t grid_h, std::size_t grid_w, const DecoderParams& params) {
  if (params.out_h == 0 || params.out_w == 0) fail(Errc::ShapeMismatch, "decoder output size is empty");
  const auto by = to_eigen(bilinear_weights(grid_h, params.out_h), grid_h);
  const auto bx = to_eigen(bilinear_weights(grid_w, params.out_w), grid_w);
  return to_map(forward(focused, grid_h, grid_w, params, by, bx).y);
}

double map_loss(const Map2D& prediction, const Map2D& target) {
  if (prediction.height != target.height || prediction.width != target.width)
    fail(Errc::ShapeMismatch, "prediction and target maps differ in shape");
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(prediction.size());
}

LossAndGradient decoder_loss_and_gradient(const DecoderParams& p, std::span<const TrainingSample> samples,
                                          const LayerSet& layers) {
  if (samples.empty()) fail(Errc::InvalidArgument, "training set is empty");
  LossAndGradient out;
  Eigen::MatrixXd dw1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols());
  Eigen::VectorXd db1 = Eigen::VectorXd::Zero(p.b1.size());
  Eigen::VectorXd dw2 = Eigen::VectorXd::Zero(p.w2.size());
  double db2 = 0.0;
  const double inv_s = 1.0 / static_cast<double>(samples.size());

  for (const auto& s : samples) {
    const auto& bo = s.backbone;
    if (s.target.height != p.out_h || s.target.width != p.out_w)
      fail(Errc::ShapeMismatch, "pseudo ground truth does not match the decoder output size");
    const Eigen::MatrixXd focused = focus_features(bo, aggregate_attention(bo, layers));
    const auto by = to_eigen(bilinear_weights(bo.grid_h, p.out_h), bo.grid_h);
    const auto bx = to_eigen(bilinear_weights(bo.grid_w, p.out_w), bo.grid_w);
    const Forward f = forward(focused, bo.grid_h, bo.grid_w, p, by, bx);

    const double hw = static_cast<double>(p.out_h * p.out_w);
    Eigen::MatrixXd g(f.y.rows(), f.y.cols());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < f.y.rows(); ++r)
      for (Eigen::Index c = 0; c < f.y.cols(); ++c) {
        const double y = f.y(r, c);
        const double d = y - s.target.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        loss += d * d;
        g(r, c) = 2.0 / hw * d * y * (1.0 - y) * inv_s;
      }
    out.loss += loss / hw * inv_s;

    const RowMajor dz_grid = by.transpose() * g * bx;
    const Eigen::VectorXd dz = Eigen::Map<const Eigen::VectorXd>(dz_grid.data(), dz_grid.size());
    dw2 += f.hidden.transpose() * dz;
    db2 += dz.sum();
    Eigen::MatrixXd dpre = dz * p.w2.transpose();
    if (p.activation == Activation::Tanh) dpre.array() *= 1.0 - f.hidden.array().square();
    dw1 += dpre.transpose() * focused;
    db1 += dpre.colwise().sum().transpose();
  }

  DecoderParams grad = p;
  grad.w1 = dw1;
  grad.b1 = db1;
  grad.w2 = dw2;
  grad.b2 = db2;
  out.gradient = grad.flatten();
  return out;
}

TrainingResult train_decoder(std::span<const TrainingSample> samples, const LayerSet& layers, int steps, double lr,
                             DecoderParams init) {
  if (samples.empty()) fail(Errc::InvalidArgument, "training set is empty");
  if (steps < 0) fail(Errc::InvalidArgument, "steps must be nonnegative");
  TrainingResult result{std::move(init), {}};
  std::vector<double> theta = result.params.flatten();
  for (int step = 0;; ++step) {
    const auto lg = decoder_loss_and_gradient(result.params, samples, layers);
    if (!std::isfinite(lg.loss)) fail(Errc::NonFiniteLoss, "loss became non-finite at step " + std::to_string(step));
    result.loss_trace.push_back(lg.loss);
    if (step == steps) break;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * lg.gradient[i];
    result.params.unflatten(theta);
  }
  return result;
}

AffectiveMask postprocess(const Map2D& dense, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) fail(Errc::InvalidArgument, "threshold must lie in (0,1)");
  AffectiveMask m;
  m.dense = dense;
  m.binary = Map2D(dense.height, dense.width, 0.0);
  const std::size_t h = dense.height;
  const std::size_t w = dense.width;
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> best;
  int next = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (label[start] >= 0 || dense.data[start] < threshold) continue;
    std::vector<std::size_t> comp;
    std::deque<std::size_t> queue{start};
    label[start] = next;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      comp.push_back(i);
      const std::size_t y = i / w;
      const std::size_t x = i % w;
      auto visit = [&](std::size_t j) {
        if (label[j] < 0 && dense.data[j] >= threshold) {
          label[j] = next;
          queue.push_back(j);
        }
      };
      if (y > 0) visit(i - w);
      if (y + 1 < h) visit(i + w);
      if (x > 0) visit(i - 1);
      if (x + 1 < w) visit(i + 1);
    }
    if (comp.size() > best.size()) best = std::move(comp);
    ++next;
  }
  if (best.empty()) return m;
  Box b{static_cast<int>(w), static_cast<int>(h), -1, -1};
  for (std::size_t i : best) {
    m.binary.data[i] = 1.0;
    const int y = static_cast<int>(i / w);
    const int x = static_cast<int>(i % w);
    b.x0 = std::min(b.x0, x);
    b.y0 = std::min(b.y0, y);
    b.x1 = std::max(b.x1, x);
    b.y1 = std::max(b.y1, y);
  }
  m.box = b;
  return m;
}

Map2D mask_to_latent(const Map2D& mask, std::size_t height, std::size_t width) {
  Map2D out = resample_area(mask, height, width);
  for (auto& v : out.data) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Tiny backbone

namespace {

constexpr int kPatchStats = 8;

Eigen::VectorXd patch_statistics(const Image& img, std::size_t py, std::size_t px, std::size_t p) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kPatchStats);
  const double n = static_cast<double>(p * p);
  double g_sum = 0.0, g_sq = 0.0;
  std::array<double, 4> quad{};
  const std::size_t half = std::max<std::size_t>(p / 2, 1);
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x) {
      const std::size_t iy = py * p + y;
      const std::size_t ix = px * p + x;
      double rgb[3];
      for (std::size_t c = 0; c < 3; ++c) rgb[c] = img.at(iy, ix, img.channels == 1 ? 0 : c) / 255.0;
      const double g = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      for (int c = 0; c < 3; ++c) f(c) += rgb[c] / n;
      g_sum += g;
      g_sq += g * g;
      quad[(y >= half ? 2 : 0) + (x >= half ? 1 : 0)] += g;
    }
  const double mean = g_sum / n;
  for (int q = 0; q < 4; ++q) f(3 + q) = quad[static_cast<std::size_t>(q)] / (n / 4.0);
  f(7) = std::sqrt(std::max(0.0, g_sq / n - mean * mean));
  return (f.array() * 2.0 - 1.0).matrix();
}

void normalize_rows(Eigen::MatrixXd& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    x.row(r).array() -= mean;
    const double sd = std::sqrt(x.row(r).squaredNorm() / static_cast<double>(x.cols()) + 1e-6);
    x.row(r) /= sd;
  }
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    out.row(r) = (s.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

TinyBackbone::TinyBackbone(TinyBackboneConfig config) : config_(config) {
  if (config_.dim == 0 || config_.heads <= 0 || config_.dim % static_cast<std::size_t>(config_.heads) != 0)
    fail(Errc::ConfigError, "backbone dim must be a positive multiple of heads");
  if (config_.patch == 0 || config_.layers <= 0) fail(Errc::ConfigError, "backbone needs patch > 0 and layers > 0");
  std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> n01(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(config_.dim);
  const auto dh = d / config_.heads;
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double scale) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * n01(rng);
    return m;
  };
  embed_ = gaussian(d, kPatchStats, 1.0 / std::sqrt(double(kPatchStats)));
  embed_bias_ = gaussian(d, 1, 0.1).col(0);
  cls_ = gaussian(d, 1, 1.0).col(0);
  for (int l = 0; l < config_.layers; ++l) {
    Layer layer;
    for (int h = 0; h < config_.heads; ++h) {
      layer.wq.push_back(gaussian(d, dh, 1.0 / std::sqrt(double(d))));
      layer.wk.push_back(gaussian(d, dh, 1.0 / std::sqrt(double(d))));
      layer.wv.push_back(gaussian(d, dh, 1.0 / std::sqrt(double(d))));
    }
    layer.wo = gaussian(d, d, 0.5 / std::sqrt(double(d)));
    layers_.push_back(std::move(layer));
  }
}

BackboneOutput TinyBackbone::run(const Image& image, const std::vector<int>& layers) {
  const std::size_t p = config_.patch;
  const std::size_t gh = image.height / p;
  const std::size_t gw = image.width / p;
  if (gh == 0 || gw == 0) fail(Errc::ShapeMismatch, "image smaller than one patch");
  for (int l : layers)
    if (l < 0 || l >= config_.layers) fail(Errc::LayerOutOfRange, "layer " + std::to_string(l) + " not available");

  const auto n = static_cast<Eigen::Index>(gh * gw);
  const auto d = static_cast<Eigen::Index>(config_.dim);
  Eigen::MatrixXd x(n + 1, d);
  x.row(0) = cls_.transpose();
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      const auto i = static_cast<Eigen::Index>(py * gw + px);
      Eigen::VectorXd tok = embed_ * patch_statistics(image, py, px, p) + embed_bias_;
      const double fy = (py + 0.5) / static_cast<double>(gh);
      const double fx = (px + 0.5) / static_cast<double>(gw);
      for (Eigen::Index k = 0; k < d; ++k)
        tok(k) += 0.1 * (k % 2 == 0 ? std::sin((k + 1) * fy * 3.14159) : std::cos((k + 1) * fx * 3.14159));
      x.row(i + 1) = tok.transpose();
    }
  normalize_rows(x);

  BackboneOutput out;
  out.grid_h = gh;
  out.grid_w = gw;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / config_.heads));
  for (int l = 0; l < config_.layers; ++l) {
    const Layer& layer = layers_[static_cast<std::size_t>(l)];
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(n + 1, d);
    Eigen::VectorXd cls_row = Eigen::VectorXd::Zero(n);
    for (int h = 0; h < config_.heads; ++h) {
      const Eigen::MatrixXd q = x * layer.wq[static_cast<std::size_t>(h)];
      const Eigen::MatrixXd k = x * layer.wk[static_cast<std::size_t>(h)];
      const Eigen::MatrixXd v = x * layer.wv[static_cast<std::size_t>(h)];
      const Eigen::MatrixXd a = softmax_rows(q * k.transpose() * inv_sqrt_dh);
      cls_row += a.row(0).tail(n).transpose() / static_cast<double>(config_.heads);
      mixed.middleCols(h * (d / config_.heads), d / config_.heads) = a * v;
    }
    x += mixed * layer.wo;
    normalize_rows(x);
    if (std::find(layers.begin(), layers.end(), l) != layers.end()) out.cls_attentions[l] = cls_row;
  }
  out.patch_features = x.bottomRows(n);
  return out;
}

json to_json(const BackboneOutput& out) {
  json feats = json::array();
  for (Eigen::Index r = 0; r < out.patch_features.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(out.patch_features.cols()));
    for (Eigen::Index c = 0; c < out.patch_features.cols(); ++c) row[static_cast<std::size_t>(c)] = out.patch_features(r, c);
    feats.push_back(std::move(row));
  }
  json attn = json::object();
  for (const auto& [l, a] : out.cls_attentions) attn[std::to_string(l)] = std::vector<double>(a.data(), a.data() + a.size());
  return {{"patch_features", std::move(feats)}, {"cls_attentions", std::move(attn)}, {"grid", {out.grid_h, out.grid_w}}};
}

BackboneOutput backbone_output_from_json(const json& j) {
  try {
    BackboneOutput out;
    const auto grid = j.at("grid").get<std::vector<std::size_t>>();
    if (grid.size() != 2) fail(Errc::ParseError, "grid must be [H_p, W_p]");
    out.grid_h = grid[0];
    out.grid_w = grid[1];
    const auto& feats = j.at("patch_features");
    const auto n = static_cast<Eigen::Index>(feats.size());
    const auto d = n > 0 ? static_cast<Eigen::Index>(feats.at(0).size()) : 0;
    out.patch_features.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto row = feats.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != d) fail(Errc::ShapeMismatch, "ragged patch feature rows");
      for (Eigen::Index c = 0; c < d; ++c) out.patch_features(r, c) = row[static_cast<std::size_t>(c)];
    }
    for (const auto& [key, val] : j.at("cls_attentions").items()) {
      const auto v = val.get<std::vector<double>>();
      out.cls_attentions[std::stoi(key)] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    out.validate();
    return out;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed backbone response: ") + e.what());
  } catch (const std::invalid_argument&) {
    fail(Errc::ParseError, "attention layer keys must be integers");
  }
}

BackboneOutput ClientBackbone::run_path(const std::string& image_path, const std::vector<int>& layers) {
  json reply;
  try {
    reply = transport_->call({{"image_path", image_path}, {"layers", layers}});
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Errc::ClientError, e.what());
  }
  return backbone_output_from_json(reply);
}

BackboneOutput ClientBackbone::run(const Image& image, const std::vector<int>& layers) {
  static std::atomic<unsigned> counter{0};
  const auto path = std::filesystem::temp_directory_path() /
                    ("emokg_backbone_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".png");
  write_png(image, path);
  struct Remove {
    std::filesystem::path p;
    ~Remove() {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  } cleanup{path};
  return run_path(path.string(), layers);
}

std::vector<SyntheticBlobSample> synthetic_blob_images(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<SyntheticBlobSample> out;
  for (std::size_t k = 0; k < count; ++k) {
    SyntheticBlobSample s{Image(size, size, 3), Map2D(size, size)};
    const double r = size * (0.15 + 0.1 * u01(rng));
    const double cy = r + (size - 2 * r) * u01(rng);
    const double cx = r + (size - 2 * r) * u01(rng);
    const std::array<double, 3> tint = {200 + 55 * u01(rng), 120 + 80 * u01(rng), 40 + 60 * u01(rng)};
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        const bool inside = dy * dy + dx * dx <= r * r;
        s.region.at(y, x) = inside ? 1.0 : 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double bg = 50 + 30 * u01(rng);
          s.image.at(y, x, c) = static_cast<std::uint8_t>(inside ? tint[c] : bg);
        }
      }
    out.push_back(std::move(s));
  }
  return out;
}

AffectiveMask localize(Backbone& backbone, const Image& image, const DecoderParams& decoder, const LayerSet& layers,
                       double threshold) {
  std::vector<int> request = layers.indices;
  if (request.empty())
    for (int l = std::max(0, backbone.layer_count() - 3); l < backbone.layer_count(); ++l) request.push_back(l);
  BackboneOutput out = backbone.run(image, request);
  out.validate();
  const LayerSet used{request};
  const Eigen::MatrixXd focused = focus_features(out, aggregate_attention(out, used));
  Map2D dense = predict_map(focused, out.grid_h, out.grid_w, decoder);
  if (dense.height != image.height || dense.width != image.width)
    dense = resample_bilinear(dense, image.height, image.width);
  return postprocess(dense, threshold);
}

TrainingResult train_on_synthetic(Backbone& backbone, const LocalizerConfig& config, std::size_t image_size) {
  std::vector<int> request = config.layers.indices;
  if (request.empty())
    for (int l = std::max(0, backbone.layer_count() - 3); l < backbone.layer_count(); ++l) request.push_back(l);
  std::vector<TrainingSample> samples;
  for (auto& s : synthetic_blob_images(config.train_images, image_size, config.seed)) {
    BackboneOutput out = backbone.run(s.image, request);
    samples.push_back({std::move(out), std::move(s.region)});
  }
  const auto dim = static_cast<std::size_t>(samples.front().backbone.patch_features.cols());
  auto init = random_decoder(dim, config.hidden, image_size, image_size, config.seed + 1);
  return train_decoder(samples, LayerSet{request}, config.train_steps, config.learning_rate, std::move(init));
}

json box_to_json(const std::optional<Box>& box) {
  if (!box) return nullptr;
  return {{"x0", box->x0}, {"y0", box->y0}, {"x1", box->x1}, {"y1", box->y1}};
}

}  // namespace emokg
