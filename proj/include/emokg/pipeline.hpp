#pragma once

// End-to-end localize -> retrieve -> cue transfer -> edit pipeline,
// configuration, batch execution and run-directory persistence.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emokg/cues.hpp"
#include "emokg/dsee.hpp"
#include "emokg/error.hpp"
#include "emokg/kg.hpp"
#include "emokg/metrics.hpp"
#include "emokg/region.hpp"
#include "emokg/retrieval.hpp"

namespace emokg {

inline constexpr const char* kConfigEnvVar = "EMOKG_CONFIG";

struct PipelineConfig {
  std::filesystem::path graph;
  std::vector<std::string> emotion_labels = default_emotion_labels();
  std::vector<std::string> positive_emotions{default_positive_emotions().begin(), default_positive_emotions().end()};

  double cue_lambda = kDefaultCueLambda;
  int top_k = kDefaultTopK;
  double tau = kDefaultTau;
  int neighbours = kDefaultNeighbours;
  std::optional<std::filesystem::path> conflict_rules;  // unset = built-in rules
  CompileMode compile_mode = CompileMode::Template;
  nlohmann::json lmm_client;  // transport config for client mode

  nlohmann::json backbone = {{"kind", "tiny"}};
  std::vector<int> era_layers;  // empty = last three
  double threshold = kDefaultMaskThreshold;
  std::optional<std::filesystem::path> decoder;  // unset = train on synthetic blobs at startup
  std::size_t decoder_train_size = 32;
  LocalizerConfig decoder_training;

  bool dsee_enabled = true;
  int steps = kDefaultSteps;
  double guidance = kDefaultGuidance;
  double lambda_att = kDefaultLambdaAtt;
  int harmonize_steps = kDefaultHarmonizeSteps;
  int inversion_iterations = kDefaultInversionIterations;
  FusionMode fusion = FusionMode::Hard;
  nlohmann::json denoiser = {{"kind", "toy"}};
  PixelCodec codec;

  nlohmann::json embedding = {{"kind", "hashing"}};
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  int workers = 1;

  /// Checks numeric ranges and that referenced files exist. Throws ConfigError.
  void validate() const;
};

/// Values absent from `j` keep their defaults; relative paths resolve against `base_dir`.
PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const PipelineConfig& config);
/// Reads `path`, or the file named by EMOKG_CONFIG when `path` is empty.
PipelineConfig load_config(const std::filesystem::path& path);

/// One pipeline invocation's provenance. Artifact paths are relative to the
/// run directory so records from equal inputs are byte-identical.
struct RunRecord {
  std::string item_id;
  std::string input;
  std::vector<std::string> targets;
  nlohmann::json scene;
  std::string mask_path;
  nlohmann::json box;
  std::vector<std::string> retrieved_paths;
  std::string subgraph_path;
  std::vector<std::string> admitted_cues;
  std::string cues_path;
  std::string prompt;
  std::string prompt_path;
  nlohmann::json edit_config;  // null when editing is disabled
  std::string output_path;
  std::map<std::string, std::string> digests;  // artifact -> FNV-1a hex
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
};

nlohmann::json to_json(const RunRecord& record);

struct StageTimings {
  std::map<std::string, double> seconds;
};

/// Thrown by run_single: carries the failing stage and the record as far as it got.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause, RunRecord partial);
  const std::string& stage() const { return stage_; }
  const RunRecord& partial() const { return partial_; }

 private:
  std::string stage_;
  RunRecord partial_;
};

/// Scene sidecar: `<image stem>.scene.json` next to the image.
std::filesystem::path scene_sidecar(const std::filesystem::path& image);

struct BatchItem {
  std::string item_id;
  std::filesystem::path image;
  std::vector<std::string> targets;
  std::optional<std::filesystem::path> scene;
};

/// CSV with columns image_path, target_emotions (';'-separated) and optional item_id, scene_path.
std::vector<BatchItem> read_batch_manifest(const std::filesystem::path& path);

struct BatchFailure {
  std::string item_id;
  std::string stage;
  std::string error;
};

struct BatchResult {
  std::filesystem::path run_dir;
  std::vector<RunRecord> records;  // successful items, manifest order
  std::vector<BatchFailure> failures;
  std::map<std::string, double> mean_seconds;
  bool partial_failure() const { return !failures.empty(); }
};

/// Holds the immutable shared state (graph, rules, backends, decoder).
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  const KnowledgeGraph& graph() const { return graph_; }
  const DecoderParams& decoder() const { return decoder_; }

  /// Creates `<output_dir>/run-<UTC timestamp>[-n]` and returns it.
  std::filesystem::path make_run_dir() const;

  /// Runs all stages for one image, writing artifacts under `run_dir/items/<item_id>/`.
  RunRecord run_single(const BatchItem& item, const std::filesystem::path& run_dir, StageTimings* timings = nullptr);

  /// Runs items on a worker pool; writes records/<item_id>.json and index.json.
  BatchResult run_batch(const std::vector<BatchItem>& items, const std::filesystem::path& run_dir);

 private:
  PipelineConfig config_;
  KnowledgeGraph graph_;
  std::vector<ConflictRule> rules_;
  std::unique_ptr<Backbone> backbone_;
  DecoderParams decoder_;
  std::shared_ptr<Denoiser> denoiser_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::unique_ptr<LmmClient> lmm_;
  NoiseSchedule schedule_;
  std::mutex denoiser_mutex_;
  std::mutex backbone_mutex_;
  std::mutex lmm_mutex_;
  bool backbone_exclusive_ = false;
};

std::unique_ptr<Backbone> make_backbone(const nlohmann::json& config);

/// FNV-1a digest of a file's bytes as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace emokg
