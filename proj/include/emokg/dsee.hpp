#pragma once

// Structure/emotion-disentangled editing on latents: DDIM inversion,
// reconstruction and editing paths with guidance, hard mask fusion,
// attention-modulated feature injection, and a final merged denoise.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emokg/client.hpp"
#include "emokg/cues.hpp"
#include "emokg/image.hpp"
#include "emokg/tensor.hpp"

namespace emokg {

inline constexpr int kDefaultSteps = 50;
inline constexpr double kDefaultGuidance = 7.5;
inline constexpr double kDefaultLambdaAtt = 0.5;
inline constexpr int kDefaultHarmonizeSteps = 5;
inline constexpr int kDefaultInversionIterations = 10;

/// ᾱ indexed by step 0..T; alphas_bar[0] == 1 and strictly decreasing.
/// model_timesteps[i] is the timestep a denoiser sees at step i.
struct NoiseSchedule {
  std::vector<double> alphas_bar;
  std::vector<int> model_timesteps;

  int steps() const { return static_cast<int>(alphas_bar.size()) - 1; }
  void validate() const;

  /// Scaled-linear betas (0.00085..0.012 over 1000 training steps), `steps` evenly spaced leading timesteps.
  static NoiseSchedule scaled_linear(int steps = kDefaultSteps, int train_steps = 1000);
  /// ᾱ_1..ᾱ_T given explicitly; ᾱ_0 = 1 is prepended, model timesteps are 0..T.
  static NoiseSchedule from_alphas(const std::vector<double>& alphas_bar_1_to_T);
};

enum class Direction { Denoise, Invert };

/// Denoise: step t -> t-1 (t in 1..T). Invert: step t -> t+1 (t in 0..T-1).
Tensor3 ddim_step(const Tensor3& x_t, const Tensor3& eps_hat, int t, const NoiseSchedule& schedule, Direction dir);

/// Condition text; nullopt is the empty condition c_∅.
using Condition = std::optional<std::string>;
Condition condition_of(const EmotionPrompt& prompt);

/// Reconstruction-path attention handed to the editing path for feature modulation.
struct Injection {
  double lambda_att = 0.0;
  std::map<int, Map2D> attention;
};

struct DenoiserOutput {
  Tensor3 eps;
  std::map<int, Map2D> attention;   // per layer, values in [0,1]
  std::map<int, Tensor3> features;  // per layer, after any injection
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// `step` indexes the schedule. When `inject` is set, the denoiser applies
  /// inject_attention to its own features before they feed the noise estimate.
  virtual DenoiserOutput predict(const Tensor3& latent, int step, const NoiseSchedule& schedule,
                                 const Condition& condition, bool want_attention, const Injection* inject) = 0;
  /// Layers carrying self-attention maps and features.
  virtual std::vector<int> layers() const { return {}; }
  /// True when concurrent predict() calls must be serialized by the caller.
  virtual bool exclusive() const { return false; }
};

/// Predicts ε̂ = 0.
class ZeroDenoiser final : public Denoiser {
 public:
  DenoiserOutput predict(const Tensor3& latent, int step, const NoiseSchedule& schedule, const Condition& condition,
                         bool want_attention, const Injection* inject) override;
};

/// Exact posterior-mean noise for data ~ N(μ, σ² I):
/// ε̂ = √(1−ᾱ)(x − √ᾱ μ) / (ᾱ σ² + 1 − ᾱ). A non-empty condition shifts μ
/// by `condition_shift` along a ±1 pattern hashed from the text.
struct GaussianDenoiserConfig {
  double mean = 0.0;
  double sigma = 1.0;
  double condition_shift = 0.5;
};

class GaussianDenoiser : public Denoiser {
 public:
  explicit GaussianDenoiser(GaussianDenoiserConfig config = {}) : config_(config) {}
  DenoiserOutput predict(const Tensor3& latent, int step, const NoiseSchedule& schedule, const Condition& condition,
                         bool want_attention, const Injection* inject) override;
  /// μ for a condition at a latent shape.
  Tensor3 mean_for(const Condition& condition, std::size_t c, std::size_t h, std::size_t w) const;
  const GaussianDenoiserConfig& config() const { return config_; }

 private:
  GaussianDenoiserConfig config_;
};

/// Gaussian denoiser plus seeded convolution-free "layers": each layer l
/// pools the latent by 2^l, mixes channels into features, exposes a sigmoid
/// self-attention map, and adds a small read-out of its (possibly injected)
/// features to ε̂. Exercises injection without model weights.
struct ToyDenoiserConfig {
  GaussianDenoiserConfig gaussian;
  int layers = 2;
  std::size_t latent_channels = 3;
  std::size_t feature_channels = 4;
  double readout_gain = 0.05;
  std::uint64_t seed = 0;
};

class ToyDenoiser final : public Denoiser {
 public:
  explicit ToyDenoiser(ToyDenoiserConfig config = {});
  DenoiserOutput predict(const Tensor3& latent, int step, const NoiseSchedule& schedule, const Condition& condition,
                         bool want_attention, const Injection* inject) override;
  std::vector<int> layers() const override;

 private:
  ToyDenoiserConfig config_;
  GaussianDenoiser base_;
  std::vector<std::vector<double>> mix_;      // per layer, feature_channels × latent_channels
  std::vector<std::vector<double>> readout_;  // per layer, latent_channels × feature_channels
};

/// Wire protocol: {"latent", "t", "condition", "want_attention", "layers"} ->
/// {"eps", "attn", "feat"}; injection adds {"inject": {"lambda_att", "attn"}}.
class ClientDenoiser final : public Denoiser {
 public:
  ClientDenoiser(std::shared_ptr<JsonTransport> transport, std::vector<int> layers)
      : transport_(std::move(transport)), layers_(std::move(layers)) {}
  DenoiserOutput predict(const Tensor3& latent, int step, const NoiseSchedule& schedule, const Condition& condition,
                         bool want_attention, const Injection* inject) override;
  std::vector<int> layers() const override { return layers_; }
  bool exclusive() const override { return transport_->exclusive(); }

 private:
  std::shared_ptr<JsonTransport> transport_;
  std::vector<int> layers_;
};

/// Builds a denoiser from {"kind": "zero"|"gaussian"|"toy"|"client", ...}.
std::shared_ptr<Denoiser> make_denoiser(const nlohmann::json& config);

nlohmann::json tensor_to_json(const Tensor3& t);
Tensor3 tensor_from_json(const nlohmann::json& j);
nlohmann::json map_to_json(const Map2D& m);
Map2D map_from_json(const nlohmann::json& j);

struct InversionOptions {
  int fixed_point_iterations = kDefaultInversionIterations;  // 0 = plain ε(x_t, t)
};

/// x_0 -> x_T under the empty condition.
Tensor3 invert(const Tensor3& x0, Denoiser& denoiser, const NoiseSchedule& schedule,
               const InversionOptions& options = {});

/// Plain (unguided) DDIM sampling x_T -> x_0 under the empty condition.
Tensor3 sample(const Tensor3& xT, Denoiser& denoiser, const NoiseSchedule& schedule);

/// ε_∅ + w(ε_c − ε_∅).
Tensor3 guided_eps(const Tensor3& eps_uncond, const Tensor3& eps_cond, double w);
Tensor3 guided_eps(Denoiser& denoiser, const Tensor3& x_t, int step, const NoiseSchedule& schedule,
                   const EmotionPrompt& prompt, double w, const Injection* inject = nullptr);

enum class FusionMode { Hard, Soft };

/// M⊙edit + (1−M)⊙rec with M broadcast over channels. Hard mode requires a
/// binary mask and selects entries exactly.
Tensor3 fuse(const Tensor3& edit_raw, const Tensor3& rec_raw, const Map2D& mask, FusionMode mode = FusionMode::Hard);

/// F + λ(A⊙F) with A area-resampled to F's grid and broadcast over channels.
Tensor3 inject_attention(const Tensor3& features, const Map2D& attention, double lambda_att);
/// Applies the single-layer rule on `layers` only; other layers pass through.
std::map<int, Tensor3> inject_attention(const std::map<int, Tensor3>& features, const std::map<int, Map2D>& attention,
                                        double lambda_att, const std::vector<int>& layers);

enum class PathKind { Reconstruction, Editing };

struct LatentTrajectory {
  PathKind kind = PathKind::Reconstruction;
  std::vector<Tensor3> states;  // states[i] is the latent at step i, i = 0..T
};

struct EditConfig {
  double guidance_scale = kDefaultGuidance;
  double lambda_att = kDefaultLambdaAtt;
  int harmonize_steps = kDefaultHarmonizeSteps;
  std::optional<std::vector<int>> injection_layers;  // unset = all denoiser layers
  FusionMode fusion = FusionMode::Hard;
  InversionOptions inversion;

  void validate(int steps) const;
};

struct EditResult {
  Tensor3 output;
  Tensor3 inverted;
  LatentTrajectory reconstruction;
  LatentTrajectory editing;
};

/// Mask must already be at latent resolution.
EditResult edit(const Tensor3& x0, const EmotionPrompt& prompt, const Map2D& mask, Denoiser& denoiser,
                const NoiseSchedule& schedule, const EditConfig& config);

/// Guided DDIM sampling from x_T with the prompt on every step (no fusion, no injection).
Tensor3 guided_sample(const Tensor3& xT, const EmotionPrompt& prompt, Denoiser& denoiser,
                      const NoiseSchedule& schedule, double w);

nlohmann::json to_json(const LatentTrajectory& trajectory);

/// Pixel <-> latent mapping for desk-scale runs: the latent is the image in
/// [-1,1] area-downsampled by `factor`; decoding adds the upsampled latent
/// change to the source image so untouched latents return the source bytes.
struct PixelCodec {
  std::size_t factor = 4;
  std::optional<std::size_t> latent_size;  // fixed square latent side, overrides factor

  Tensor3 encode(const Image& image) const;
  Image decode(const Image& source, const Tensor3& source_latent, const Tensor3& edited_latent) const;
  std::size_t latent_height(const Image& image) const;
  std::size_t latent_width(const Image& image) const;
};

}  // namespace emokg
