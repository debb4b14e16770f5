#include "doctest.h"

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/pipeline.hpp"
#include "fixtures.hpp"

using namespace emokg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<BatchItem> toy_items(const fs::path& dir, std::size_t n) {
  return read_batch_manifest(fixture::write_toy_batch(dir, n));
}

/// Decoder whose logits sit far below zero everywhere: ERA yields an empty mask.
fs::path write_silent_decoder(const fs::path& dir) {
  auto d = zero_decoder(16, 4, 32, 32);
  d.b2 = -20.0;
  const auto p = dir / "silent_decoder.json";
  fixture::write_file(p, to_json(d).dump());
  return p;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  fixture::TempDir tmp("cfg");
  auto j = fixture::toy_config(tmp / "runs");
  const auto c = config_from_json(j);
  CHECK(c.graph == fixture::toy_graph());
  CHECK(c.tau == 0.3);
  CHECK(c.steps == 10);
  CHECK(c.harmonize_steps == 2);
  CHECK(config_from_json(to_json(c)).steps == 10);

  j["graph"] = (tmp / "nope.jsonl").string();
  try {
    Pipeline p(config_from_json(j));
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ConfigError);
  }
  j = fixture::toy_config(tmp / "runs");
  j["dsee"]["harmonize_steps"] = 10;
  CHECK_THROWS_AS(config_from_json(j).validate(), Error);
  j = fixture::toy_config(tmp / "runs");
  j["cues"]["mode"] = "oracle";
  CHECK_THROWS_AS(config_from_json(j), Error);

  fixture::write_file(tmp / "cfg.json", json{{"graph", "g.jsonl"}, {"cues", {{"tau", 0.4}}}}.dump());
  ::setenv(kConfigEnvVar, (tmp / "cfg.json").c_str(), 1);
  const auto from_env = load_config({});
  ::unsetenv(kConfigEnvVar);
  CHECK(from_env.tau == 0.4);
  CHECK(from_env.graph == tmp / "g.jsonl");
}

TEST_CASE("batch manifest") {
  fixture::TempDir tmp("manifest");
  fixture::write_file(tmp / "m.csv", "image_path,target_emotions,scene_path\na.png,Fear; anger,a.json\nb.png,awe,\n");
  const auto items = read_batch_manifest(tmp / "m.csv");
  REQUIRE(items.size() == 2);
  CHECK(items[0].item_id == "a");
  CHECK(items[0].targets == std::vector<std::string>{"fear", "anger"});
  CHECK(items[0].scene == tmp / "a.json");
  CHECK_FALSE(items[1].scene.has_value());
  fixture::write_file(tmp / "dup.csv", "item_id,image_path,target_emotions\nx,a.png,awe\nx,b.png,awe\n");
  CHECK_THROWS_AS(read_batch_manifest(tmp / "dup.csv"), Error);
  fixture::write_file(tmp / "bad.csv", "image,target\n");
  CHECK_THROWS_AS(read_batch_manifest(tmp / "bad.csv"), Error);
  CHECK(scene_sidecar("/x/y/img.png") == fs::path("/x/y/img.scene.json"));
}

TEST_CASE("single item produces a complete record") {
  fixture::TempDir tmp("single");
  const auto items = toy_items(tmp.path(), 1);
  Pipeline p(config_from_json(fixture::toy_config(tmp / "runs")));
  const auto run = tmp / "run";
  StageTimings timings;
  const auto rec = p.run_single(items[0], run, &timings);
  CHECK(rec.status == "ok");
  CHECK(rec.targets == std::vector<std::string>{"fear"});
  CHECK_FALSE(rec.retrieved_paths.empty());
  CHECK_FALSE(rec.prompt.empty());
  CHECK(rec.prompt.find("fear") == std::string::npos);
  for (const auto& rel : {rec.mask_path, rec.subgraph_path, rec.cues_path, rec.prompt_path, rec.output_path}) {
    CHECK(fs::path(rel).is_relative());
    CHECK(fs::exists(run / rel));
  }
  CHECK(rec.digests.size() == 5);
  CHECK(rec.digests.at("edited.png") == file_digest(run / rec.output_path));
  for (const char* s : {"load", "era", "retrieval", "cues", "dsee"}) CHECK(timings.seconds.contains(s));
  const auto j = to_json(rec);
  CHECK(j.contains("box"));
  CHECK(j.at("edit_config").at("steps") == 10);
  CHECK(subgraph_from_json(json::parse(read_text(run / rec.subgraph_path))).paths.size() == rec.retrieved_paths.size());
}

TEST_CASE("empty ERA mask leaves the image in place") {
  fixture::TempDir tmp("empty");
  const auto items = toy_items(tmp.path(), 1);
  auto j = fixture::toy_config(tmp / "runs");
  j["era"]["decoder"] = write_silent_decoder(tmp.path()).string();
  j["dsee"]["denoiser"] = {{"kind", "gaussian"}};
  j["dsee"]["steps"] = 50;
  j["dsee"]["harmonize_steps"] = 5;
  Pipeline p(config_from_json(j));
  const auto rec = p.run_single(items[0], tmp / "run");
  CHECK(rec.box.is_null());
  const auto in = read_png(items[0].image);
  const auto out = read_png(tmp / "run" / rec.output_path);
  REQUIRE(in.pixels.size() == out.pixels.size());
  int worst = 0;
  for (std::size_t i = 0; i < in.pixels.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<int>(in.pixels[i]) - static_cast<int>(out.pixels[i])));
  CHECK(worst <= 1);
  CHECK_FALSE(rec.prompt_path.empty());
}

TEST_CASE("two targets are retrieved together") {
  fixture::TempDir tmp("multi");
  auto items = toy_items(tmp.path(), 1);
  items[0].targets = {"fear", "anger"};
  auto j = fixture::toy_config(tmp / "runs");
  j["dsee"]["enabled"] = false;
  Pipeline p(config_from_json(j));
  const auto rec = p.run_single(items[0], tmp / "run");
  CHECK(rec.targets == items[0].targets);
  CHECK(rec.edit_config.is_null());

  RetrievalQuery q;
  const auto scene = scene_from_json(json::parse(read_text(scene_sidecar(items[0].image))));
  q.starts.push_back(p.graph().find_by_text(NodeKind::Scene, scene.scene)->id);
  for (const auto& o : scene.objects) q.starts.push_back(p.graph().find_by_text(NodeKind::Object, o.label)->id);
  q.targets = {p.graph().emotion_node("fear")->id, p.graph().emotion_node("anger")->id};
  q.k = p.config().neighbours;
  const auto sg = retrieve_subgraph(p.graph(), q);
  CHECK(subgraph_from_json(json::parse(read_text(tmp / "run" / rec.subgraph_path))).paths == sg.paths);
}

TEST_CASE("stage errors carry the stage and partial record") {
  fixture::TempDir tmp("err");
  auto items = toy_items(tmp.path(), 1);
  Pipeline p(config_from_json(fixture::toy_config(tmp / "runs")));
  auto bad = items[0];
  bad.targets = {"boredom"};
  try {
    p.run_single(bad, tmp / "run");
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load");
    CHECK(e.partial().item_id == bad.item_id);
    CHECK(e.partial().status == "failed");
  }
}

TEST_CASE("batch isolates failures and is reproducible") {
  fixture::TempDir tmp("batch");
  auto items = toy_items(tmp.path(), 3);
  items[1].image = tmp / "images" / "missing.png";
  Pipeline p(config_from_json(fixture::toy_config(tmp / "runs")));
  const auto r1 = p.run_batch(items, tmp / "run1");
  CHECK(r1.records.size() == 2);
  REQUIRE(r1.failures.size() == 1);
  CHECK(r1.failures[0].item_id == items[1].item_id);
  CHECK(r1.failures[0].stage == "load");
  CHECK(r1.partial_failure());
  const auto index = json::parse(read_text(tmp / "run1" / "index.json"));
  CHECK(index.at("summary").at("failed") == 1);
  CHECK(index.at("summary").at("succeeded") == 2);

  const auto r2 = p.run_batch(items, tmp / "run2");
  for (const auto& rec : r1.records) {
    const auto name = "records/" + rec.item_id + ".json";
    CHECK(read_text(tmp / "run1" / name) == read_text(tmp / "run2" / name));
  }
  CHECK(fs::exists(tmp / "run1" / "records" / (items[1].item_id + ".json")));
}

TEST_CASE("run directories are unique") {
  fixture::TempDir tmp("dirs");
  Pipeline p(config_from_json(fixture::toy_config(tmp / "runs")));
  const auto a = p.make_run_dir();
  const auto b = p.make_run_dir();
  CHECK(a != b);
  CHECK(fs::is_directory(a));
  CHECK(a.filename().string().rfind("run-", 0) == 0);
}
