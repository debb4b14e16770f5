#pragma once

// Affective-region localization: layer-averaged CLS attention, attention-
// weighted patch features, a lightweight decoder to a dense activation map,
// and largest-component post-processing.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "emokg/client.hpp"
#include "emokg/image.hpp"
#include "emokg/tensor.hpp"

namespace emokg {

inline constexpr double kDefaultMaskThreshold = 0.5;

struct BackboneOutput {
  Eigen::MatrixXd patch_features;                 // N × D, CLS excluded, grid row-major
  std::map<int, Eigen::VectorXd> cls_attentions;  // layer -> length-N CLS-to-patch weights
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t patches() const { return grid_h * grid_w; }
  /// Throws ShapeMismatch when features, attentions and grid disagree.
  void validate() const;
};

struct LayerSet {
  std::vector<int> indices;
};

/// The last `count` layers present in `out` (fewer if the backbone is shallower).
LayerSet last_layers(const BackboneOutput& out, int count = 3);

/// Inclusive pixel bounds.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct AffectiveMask {
  Map2D dense;   // values in [0,1]
  Map2D binary;  // values in {0,1}
  std::optional<Box> box;
};

enum class Activation { Tanh, Identity };

/// Pointwise two-layer projection per patch, bilinear upsample to (out_h, out_w), logistic.
struct DecoderParams {
  Activation activation = Activation::Tanh;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  Eigen::MatrixXd w1;  // hidden × D
  Eigen::VectorXd b1;  // hidden
  Eigen::VectorXd w2;  // hidden
  double b2 = 0.0;

  std::size_t in_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t parameter_count() const;
  /// Flattened view used by optimizers and gradient checks: w1 (row-major), b1, w2, b2.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
};

DecoderParams zero_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_h, std::size_t out_w,
                           Activation act = Activation::Tanh);
/// Gaussian init with standard deviation `scale / sqrt(fan_in)`, deterministic in `seed`.
DecoderParams random_decoder(std::size_t in_dim, std::size_t hidden, std::size_t out_h, std::size_t out_w,
                             std::uint64_t seed, double scale = 1.0, Activation act = Activation::Tanh);

nlohmann::json to_json(const DecoderParams& params);
DecoderParams decoder_from_json(const nlohmann::json& j);

/// Arithmetic mean of the selected layers' CLS attention vectors.
Eigen::VectorXd aggregate_attention(const BackboneOutput& out, const LayerSet& layers);

/// Row i scaled by m_patch[i].
Eigen::MatrixXd focus_features(const BackboneOutput& out, const Eigen::VectorXd& m_patch);

/// Dense activation map in [0,1] from a focused N × D grid of shape (grid_h, grid_w).
Map2D predict_map(const Eigen::MatrixXd& focused, std::size_t grid_h, std::size_t grid_w,
                  const DecoderParams& params);

struct TrainingSample {
  BackboneOutput backbone;
  Map2D target;  // pseudo ground-truth region, decoder output resolution
};

/// Mean squared error between prediction and target, averaged over pixels.
double map_loss(const Map2D& prediction, const Map2D& target);

/// Loss averaged over samples, and its gradient with respect to flatten().
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};
LossAndGradient decoder_loss_and_gradient(const DecoderParams& params, std::span<const TrainingSample> samples,
                                          const LayerSet& layers);

struct TrainingResult {
  DecoderParams params;
  std::vector<double> loss_trace;  // steps + 1 entries, the first at initialization
};

/// Full-batch gradient descent on the decoder.
TrainingResult train_decoder(std::span<const TrainingSample> samples, const LayerSet& layers, int steps, double lr,
                             DecoderParams init);

/// Threshold, keep the largest 4-connected component (ties: the component
/// whose first pixel comes first in raster order), and box it.
AffectiveMask postprocess(const Map2D& dense, double threshold = kDefaultMaskThreshold);

/// Area-average a mask to latent resolution and re-binarize at 0.5.
Map2D mask_to_latent(const Map2D& mask, std::size_t height, std::size_t width);

/// Source of patch features and CLS attentions for an image.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual BackboneOutput run(const Image& image, const std::vector<int>& layers) = 0;
  virtual int layer_count() const = 0;
};

struct TinyBackboneConfig {
  std::size_t patch = 8;
  std::size_t dim = 16;
  int layers = 4;
  int heads = 2;
  std::uint64_t seed = 0;
};

/// Small deterministic ViT-style self-attention stack with a CLS token.
/// Heads are averaged before layers.
class TinyBackbone final : public Backbone {
 public:
  explicit TinyBackbone(TinyBackboneConfig config = {});
  BackboneOutput run(const Image& image, const std::vector<int>& layers) override;
  int layer_count() const override { return config_.layers; }
  const TinyBackboneConfig& config() const { return config_; }

 private:
  struct Layer {
    std::vector<Eigen::MatrixXd> wq, wk, wv;  // per head, D × dh
    Eigen::MatrixXd wo;                       // D × D
  };
  TinyBackboneConfig config_;
  Eigen::MatrixXd embed_;  // D × 8
  Eigen::VectorXd embed_bias_;
  Eigen::VectorXd cls_;
  std::vector<Layer> layers_;
};

/// {"image_path", "layers"} -> {"patch_features", "cls_attentions", "grid"}.
class ClientBackbone final : public Backbone {
 public:
  ClientBackbone(std::shared_ptr<JsonTransport> transport, int layer_count)
      : transport_(std::move(transport)), layer_count_(layer_count) {}
  BackboneOutput run(const Image& image, const std::vector<int>& layers) override;
  /// Sends an on-disk image path without re-encoding.
  BackboneOutput run_path(const std::string& image_path, const std::vector<int>& layers);
  int layer_count() const override { return layer_count_; }

 private:
  std::shared_ptr<JsonTransport> transport_;
  int layer_count_;
};

BackboneOutput backbone_output_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackboneOutput& out);

/// Synthetic images with a bright blob on a textured background and the blob
/// as pseudo ground truth, for desk-scale decoder training.
struct SyntheticBlobSample {
  Image image;
  Map2D region;
};
std::vector<SyntheticBlobSample> synthetic_blob_images(std::size_t count, std::size_t size, std::uint64_t seed);

struct LocalizerConfig {
  LayerSet layers;  // empty = last three
  double threshold = kDefaultMaskThreshold;
  std::size_t hidden = 8;
  int train_steps = 1000;
  double learning_rate = 2.0;
  std::size_t train_images = 16;
  std::uint64_t seed = 0;
};

/// Runs backbone -> aggregate -> focus -> decode -> postprocess at image resolution.
AffectiveMask localize(Backbone& backbone, const Image& image, const DecoderParams& decoder, const LayerSet& layers,
                       double threshold);

/// Trains a decoder for `backbone` on synthetic blob images; deterministic in config.seed.
TrainingResult train_on_synthetic(Backbone& backbone, const LocalizerConfig& config, std::size_t image_size);

nlohmann::json box_to_json(const std::optional<Box>& box);

}  // namespace emokg
