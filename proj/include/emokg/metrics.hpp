#pragma once

// Evaluation metrics (CLIP-I proximity, target emotion activation, SSIM,
// emotion accuracy) and the manifest-driven report.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emokg/client.hpp"
#include "emokg/image.hpp"
#include "emokg/tensor.hpp"

namespace emokg {

/// max(0, 1 − |d − 0.75| / 0.25) for d in [0,1].
double clip_i_prox(double d);

/// Normalized share of similarity `target` after clamping negatives to 0.
double tea_from_similarities(std::span<const double> similarities, std::size_t target);
/// Cosine similarities of the image embedding to each emotion text embedding, then tea_from_similarities.
double tea(std::span<const double> image_embedding, const std::vector<std::vector<double>>& emotion_embeddings,
           std::size_t target);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 255.0;
};

/// Mean SSIM over the valid region of a Gaussian-weighted window (population statistics).
double ssim(const Map2D& a, const Map2D& b, const SsimOptions& options = {});
/// Luma conversion, then ssim().
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

enum class AccMode { Acc8, Acc2 };

struct PolarityTable {
  std::vector<std::string> labels;
  std::vector<std::string> positive;

  static PolarityTable mikels();
  bool known(const std::string& label) const;
  bool is_positive(const std::string& label) const;
};

double emo_acc(const std::vector<std::string>& predictions, const std::vector<std::string>& targets, AccMode mode,
               const PolarityTable& table = PolarityTable::mikels());

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed_image(const std::filesystem::path& path) = 0;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
};

/// Deterministic offline provider: images via a seeded projection of a
/// coarse color thumbnail, text via signed token hashing.
class HashingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashingEmbeddingProvider(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  std::vector<double> embed_image(const std::filesystem::path& path) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::vector<double> embed_image(const Image& image) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// {"image_path"} or {"text"} -> {"embedding": [...]}.
class ClientEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit ClientEmbeddingProvider(std::shared_ptr<JsonTransport> transport) : transport_(std::move(transport)) {}
  std::vector<double> embed_image(const std::filesystem::path& path) override;
  std::vector<double> embed_text(const std::string& text) override;

 private:
  std::vector<double> request(const nlohmann::json& req);
  std::shared_ptr<JsonTransport> transport_;
};

struct Classification {
  std::string label;
  std::map<std::string, double> scores;
};

class EmotionClassifier {
 public:
  virtual ~EmotionClassifier() = default;
  virtual Classification classify(const std::filesystem::path& image_path) = 0;
};

/// Picks the label whose text embedding is most similar to the image (ties by label order).
class EmbeddingClassifier final : public EmotionClassifier {
 public:
  EmbeddingClassifier(std::shared_ptr<EmbeddingProvider> provider, std::vector<std::string> labels)
      : provider_(std::move(provider)), labels_(std::move(labels)) {}
  Classification classify(const std::filesystem::path& image_path) override;

 private:
  std::shared_ptr<EmbeddingProvider> provider_;
  std::vector<std::string> labels_;
};

/// {"image_path"} -> {"label", "scores"}.
class ClientClassifier final : public EmotionClassifier {
 public:
  explicit ClientClassifier(std::shared_ptr<JsonTransport> transport) : transport_(std::move(transport)) {}
  Classification classify(const std::filesystem::path& image_path) override;

 private:
  std::shared_ptr<JsonTransport> transport_;
};

struct ManifestRow {
  std::string source_path;
  std::string edited_path;
  std::string target_emotion;
  std::string method;
};

/// Reads a CSV with header columns source_path, edited_path, target_emotion, method (any order).
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string csv_escape(const std::string& field);

struct MetricItem {
  ManifestRow row;
  double clip_i_raw = 0.0;
  double clip_i_prox = 0.0;
  double tea = 0.0;
  double ssim = 0.0;
  std::string predicted;
};

struct MetricAggregate {
  std::size_t count = 0;
  double clip_i_raw = 0.0;
  double clip_i_prox = 0.0;
  double tea = 0.0;
  double ssim = 0.0;
  double emo_acc8 = 0.0;
  double emo_acc2 = 0.0;
};

struct MetricReport {
  std::vector<MetricItem> items;
  MetricAggregate overall;
  std::map<std::string, MetricAggregate> by_method;
};

MetricAggregate aggregate(std::span<const MetricItem> items, const PolarityTable& table = PolarityTable::mikels());

/// Relative paths in the manifest resolve against the manifest's directory.
MetricReport report(const std::filesystem::path& manifest, EmbeddingProvider& provider, EmotionClassifier& classifier,
                    const PolarityTable& table = PolarityTable::mikels());

std::string report_csv(const MetricReport& report);
std::string report_markdown(const MetricReport& report);
/// Writes metrics.csv and metrics.md under `dir`.
void write_report(const MetricReport& report, const std::filesystem::path& dir);

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const nlohmann::json& config);
std::shared_ptr<EmotionClassifier> make_classifier(const nlohmann::json& config,
                                                   std::shared_ptr<EmbeddingProvider> provider,
                                                   std::vector<std::string> labels);

}  // namespace emokg
