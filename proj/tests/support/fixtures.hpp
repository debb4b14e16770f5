#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "emokg/image.hpp"
#include "emokg/pipeline.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path fixtures_dir() { return EMOKG_FIXTURES_DIR; }
inline fs::path data_dir() { return EMOKG_DATA_DIR; }
inline fs::path toy_graph() { return fixtures_dir() / "toy_graph.jsonl"; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("emokg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Toy RGB image: noisy background with a tinted disc whose place depends on `seed`.
inline emokg::Image toy_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(40, 90);
  std::uniform_real_distribution<double> pos(0.3, 0.7);
  emokg::Image img(size, size, 3);
  const double cy = pos(rng) * static_cast<double>(size), cx = pos(rng) * static_cast<double>(size);
  const double r = 0.2 * static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
      const bool in = dy * dy + dx * dx <= r * r;
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<std::uint8_t>(in ? 200 + 20 * static_cast<int>(c) % 55 : noise(rng));
    }
  return img;
}

struct ToyScene {
  std::string scene;
  std::vector<std::string> objects;
  std::string emotion;
};

inline const std::vector<ToyScene>& toy_scenes() {
  static const std::vector<ToyScene> scenes = {
      {"forest", {"dog"}, "fear"},           {"park", {"bench", "tree"}, "contentment"},
      {"street", {"car"}, "sadness"},        {"kitchen", {"cake"}, "amusement"},
      {"beach", {"boat"}, "awe"},            {"alley", {"trash"}, "excitement"},
      {"park", {"garbage"}, "contentment"},  {"street", {"house"}, "disgust"},
      {"forest", {"cat", "tree"}, "anger"},  {"beach", {"litter"}, "amusement"},
  };
  return scenes;
}

/// Writes `count` toy images with scene sidecars and a batch manifest under `dir`.
inline fs::path write_toy_batch(const fs::path& dir, std::size_t count = 10, std::size_t size = 32) {
  std::string manifest = "item_id,image_path,target_emotions\n";
  for (std::size_t i = 0; i < count; ++i) {
    const auto& s = toy_scenes()[i % toy_scenes().size()];
    const std::string id = "item" + std::to_string(i);
    const fs::path img = dir / "images" / (id + ".png");
    fs::create_directories(img.parent_path());
    emokg::write_png(toy_image(size, 1000 + i), img);
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects) objs.push_back({{"label", o}, {"attributes", nlohmann::json::array()}});
    write_file(emokg::scene_sidecar(img),
               nlohmann::json{{"scene", s.scene}, {"o_prompt", "a " + s.objects[0] + " in a " + s.scene}, {"objects", objs}}
                   .dump(2));
    manifest += id + ",images/" + id + ".png," + s.emotion + "\n";
  }
  write_file(dir / "batch.csv", manifest);
  return dir / "batch.csv";
}

/// Small, fast pipeline config over the toy graph.
inline nlohmann::json toy_config(const fs::path& out_dir) {
  return {
      {"graph", toy_graph().string()},
      {"seed", 0},
      {"workers", 2},
      {"output_dir", out_dir.string()},
      {"embedding", {{"kind", "hashing"}}},
      {"cues", {{"tau", 0.3}, {"conflict_rules", (data_dir() / "conflict_rules.json").string()}}},
      {"era", {{"train", {{"image_size", 32}, {"steps", 60}, {"images", 8}}}}},
      {"dsee", {{"steps", 10}, {"harmonize_steps", 2}, {"denoiser", {{"kind", "toy"}}}, {"codec", {{"factor", 4}}}}},
  };
}

}  // namespace fixture
