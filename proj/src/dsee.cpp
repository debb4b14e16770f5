#include "emokg/dsee.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/text.hpp"

namespace emokg {

using nlohmann::json;

void NoiseSchedule::validate() const {
  if (alphas_bar.empty()) fail(Errc::ConfigError, "noise schedule is empty");
  if (model_timesteps.size() != alphas_bar.size()) fail(Errc::ConfigError, "schedule timesteps and alphas differ in length");
  if (alphas_bar[0] != 1.0) fail(Errc::ConfigError, "alpha_bar_0 must be 1");
  for (std::size_t i = 1; i < alphas_bar.size(); ++i)
    if (!(alphas_bar[i] > 0.0 && alphas_bar[i] < alphas_bar[i - 1]))
      fail(Errc::ConfigError, "alpha_bar must be strictly decreasing in (0,1]");
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps, int train_steps) {
  if (steps < 0 || train_steps <= 0 || steps > train_steps) fail(Errc::ConfigError, "invalid schedule step counts");
  const double b0 = std::sqrt(0.00085);
  const double b1 = std::sqrt(0.012);
  std::vector<double> cumprod(static_cast<std::size_t>(train_steps));
  double acc = 1.0;
  for (int i = 0; i < train_steps; ++i) {
    const double s = train_steps == 1 ? b0 : b0 + (b1 - b0) * i / (train_steps - 1);
    acc *= 1.0 - s * s;
    cumprod[static_cast<std::size_t>(i)] = acc;
  }
  NoiseSchedule s;
  s.alphas_bar.push_back(1.0);
  s.model_timesteps.push_back(0);
  const int ratio = steps > 0 ? train_steps / steps : 1;
  for (int i = 0; i < steps; ++i) {
    const int t = i * ratio + 1 < train_steps ? i * ratio + 1 : train_steps - 1;
    s.alphas_bar.push_back(cumprod[static_cast<std::size_t>(t)]);
    s.model_timesteps.push_back(t);
  }
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::from_alphas(const std::vector<double>& alphas_bar_1_to_T) {
  NoiseSchedule s;
  s.alphas_bar.push_back(1.0);
  s.alphas_bar.insert(s.alphas_bar.end(), alphas_bar_1_to_T.begin(), alphas_bar_1_to_T.end());
  for (std::size_t i = 0; i < s.alphas_bar.size(); ++i) s.model_timesteps.push_back(static_cast<int>(i));
  s.validate();
  return s;
}

Tensor3 ddim_step(const Tensor3& x_t, const Tensor3& eps_hat, int t, const NoiseSchedule& schedule, Direction dir) {
  const int T = schedule.steps();
  const int to = dir == Direction::Denoise ? t - 1 : t + 1;
  if (t < 0 || t > T || to < 0 || to > T)
    fail(Errc::StepOutOfRange, "step " + std::to_string(t) + " out of range for " +
                                   (dir == Direction::Denoise ? "denoising" : "inversion") + " with T=" + std::to_string(T));
  if (!x_t.same_shape(eps_hat)) fail(Errc::ShapeMismatch, "noise estimate shape differs from latent");
  const double a_from = schedule.alphas_bar[static_cast<std::size_t>(t)];
  const double a_to = schedule.alphas_bar[static_cast<std::size_t>(to)];
  const double sa_from = std::sqrt(a_from);
  const double sn_from = std::sqrt(1.0 - a_from);
  const double sa_to = std::sqrt(a_to);
  const double sn_to = std::sqrt(1.0 - a_to);
  Tensor3 out(x_t.channels, x_t.height, x_t.width);
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0 = (x_t.data[i] - sn_from * eps_hat.data[i]) / sa_from;
    out.data[i] = sa_to * x0 + sn_to * eps_hat.data[i];
  }
  return out;
}

Condition condition_of(const EmotionPrompt& prompt) {
  if (prompt.empty_condition()) return std::nullopt;
  return prompt.text;
}

namespace {

void check_step(int step, const NoiseSchedule& schedule) {
  if (step < 0 || step > schedule.steps()) fail(Errc::StepOutOfRange, "step " + std::to_string(step) + " out of range");
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Map2D channel_plane(const Tensor3& t, std::size_t c) {
  Map2D m(t.height, t.width);
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(c * t.plane()), t.plane(), m.data.begin());
  return m;
}

void set_plane(Tensor3& t, std::size_t c, const Map2D& m) {
  std::copy(m.data.begin(), m.data.end(), t.data.begin() + static_cast<std::ptrdiff_t>(c * t.plane()));
}

void require_finite(const Tensor3& t, int step, const char* what) {
  if (!all_finite(t.data))
    fail(Errc::NonFiniteLatent, std::string(what) + " latent became non-finite at step " + std::to_string(step));
}

}  // namespace

DenoiserOutput ZeroDenoiser::predict(const Tensor3& latent, int step, const NoiseSchedule& schedule, const Condition&,
                                     bool, const Injection*) {
  check_step(step, schedule);
  return {Tensor3(latent.channels, latent.height, latent.width), {}, {}};
}

Tensor3 GaussianDenoiser::mean_for(const Condition& condition, std::size_t c, std::size_t h, std::size_t w) const {
  Tensor3 mu(c, h, w, config_.mean);
  if (!condition) return mu;
  const std::uint64_t key = fnv1a(*condition);
  for (std::size_t i = 0; i < mu.size(); ++i)
    mu.data[i] += (splitmix(key + i) & 1U) ? config_.condition_shift : -config_.condition_shift;
  return mu;
}

DenoiserOutput GaussianDenoiser::predict(const Tensor3& latent, int step, const NoiseSchedule& schedule,
                                         const Condition& condition, bool, const Injection*) {
  check_step(step, schedule);
  const double a = schedule.alphas_bar[static_cast<std::size_t>(step)];
  const double s2 = config_.sigma * config_.sigma;
  const double scale = std::sqrt(1.0 - a) / (a * s2 + 1.0 - a);
  const double sa = std::sqrt(a);
  const Tensor3 mu = mean_for(condition, latent.channels, latent.height, latent.width);
  DenoiserOutput out{Tensor3(latent.channels, latent.height, latent.width), {}, {}};
  for (std::size_t i = 0; i < latent.size(); ++i) out.eps.data[i] = scale * (latent.data[i] - sa * mu.data[i]);
  return out;
}

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config) : config_(config), base_(config.gaussian) {
  if (config_.layers < 0 || config_.latent_channels == 0 || config_.feature_channels == 0)
    fail(Errc::ConfigError, "toy denoiser needs layers >= 0 and nonzero channel counts");
  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t c = config_.latent_channels;
  const std::size_t f = config_.feature_channels;
  for (int l = 0; l < config_.layers; ++l) {
    std::vector<double> mix(f * c);
    std::vector<double> read(c * f);
    for (auto& v : mix) v = n01(rng) / std::sqrt(static_cast<double>(c));
    for (auto& v : read) v = n01(rng) / std::sqrt(static_cast<double>(f));
    mix_.push_back(std::move(mix));
    readout_.push_back(std::move(read));
  }
}

std::vector<int> ToyDenoiser::layers() const {
  std::vector<int> out;
  for (int l = 0; l < config_.layers; ++l) out.push_back(l);
  return out;
}

DenoiserOutput ToyDenoiser::predict(const Tensor3& latent, int step, const NoiseSchedule& schedule,
                                    const Condition& condition, bool want_attention, const Injection* inject) {
  if (latent.channels != config_.latent_channels)
    fail(Errc::ShapeMismatch, "toy denoiser expects " + std::to_string(config_.latent_channels) + " latent channels");
  DenoiserOutput out = base_.predict(latent, step, schedule, condition, false, nullptr);
  const std::size_t c = config_.latent_channels;
  const std::size_t f = config_.feature_channels;
  const double gain = config_.readout_gain * std::sqrt(1.0 - schedule.alphas_bar[static_cast<std::size_t>(step)]);

  for (int l = 0; l < config_.layers; ++l) {
    const std::size_t h = std::max<std::size_t>(1, latent.height >> l);
    const std::size_t w = std::max<std::size_t>(1, latent.width >> l);
    std::vector<Map2D> pooled;
    for (std::size_t ch = 0; ch < c; ++ch) pooled.push_back(resample_area(channel_plane(latent, ch), h, w));

    Tensor3 feat(f, h, w);
    const auto& mix = mix_[static_cast<std::size_t>(l)];
    for (std::size_t k = 0; k < f; ++k)
      for (std::size_t p = 0; p < h * w; ++p) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += mix[k * c + ch] * pooled[ch].data[p];
        feat.data[k * h * w + p] = std::tanh(s);
      }

    Map2D attn(h, w);
    for (std::size_t p = 0; p < h * w; ++p) {
      double s = 0.0;
      for (std::size_t k = 0; k < f; ++k) s += feat.data[k * h * w + p];
      attn.data[p] = sigmoid(2.0 * s / static_cast<double>(f));
    }

    if (inject) {
      const auto it = inject->attention.find(l);
      if (it != inject->attention.end()) feat = inject_attention(feat, it->second, inject->lambda_att);
    }

    const auto& read = readout_[static_cast<std::size_t>(l)];
    for (std::size_t ch = 0; ch < c; ++ch) {
      Map2D r(h, w);
      for (std::size_t p = 0; p < h * w; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < f; ++k) s += read[ch * f + k] * feat.data[k * h * w + p];
        r.data[p] = s;
      }
      const Map2D up = resample_bilinear(r, latent.height, latent.width);
      for (std::size_t p = 0; p < latent.plane(); ++p) out.eps.data[ch * latent.plane() + p] += gain * up.data[p];
    }

    if (want_attention) {
      out.attention[l] = std::move(attn);
      out.features[l] = std::move(feat);
    }
  }
  return out;
}

json tensor_to_json(const Tensor3& t) {
  json out = json::array();
  for (std::size_t c = 0; c < t.channels; ++c) {
    json plane = json::array();
    for (std::size_t y = 0; y < t.height; ++y) {
      std::vector<double> row(t.data.begin() + static_cast<std::ptrdiff_t>((c * t.height + y) * t.width),
                              t.data.begin() + static_cast<std::ptrdiff_t>((c * t.height + y + 1) * t.width));
      plane.push_back(std::move(row));
    }
    out.push_back(std::move(plane));
  }
  return out;
}

Tensor3 tensor_from_json(const json& j) {
  try {
    const std::size_t c = j.size();
    const std::size_t h = c ? j.at(0).size() : 0;
    const std::size_t w = h ? j.at(0).at(0).size() : 0;
    Tensor3 t(c, h, w);
    for (std::size_t ci = 0; ci < c; ++ci) {
      if (j.at(ci).size() != h) fail(Errc::ShapeMismatch, "ragged tensor");
      for (std::size_t y = 0; y < h; ++y) {
        const auto row = j.at(ci).at(y).get<std::vector<double>>();
        if (row.size() != w) fail(Errc::ShapeMismatch, "ragged tensor");
        std::copy(row.begin(), row.end(), t.data.begin() + static_cast<std::ptrdiff_t>((ci * h + y) * w));
      }
    }
    return t;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed tensor: ") + e.what());
  }
}

json map_to_json(const Map2D& m) {
  json out = json::array();
  for (std::size_t y = 0; y < m.height; ++y)
    out.push_back(std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(y * m.width),
                                      m.data.begin() + static_cast<std::ptrdiff_t>((y + 1) * m.width)));
  return out;
}

Map2D map_from_json(const json& j) {
  try {
    const std::size_t h = j.size();
    const std::size_t w = h ? j.at(0).size() : 0;
    Map2D m(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      const auto row = j.at(y).get<std::vector<double>>();
      if (row.size() != w) fail(Errc::ShapeMismatch, "ragged map");
      std::copy(row.begin(), row.end(), m.data.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return m;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed map: ") + e.what());
  }
}

DenoiserOutput ClientDenoiser::predict(const Tensor3& latent, int step, const NoiseSchedule& schedule,
                                       const Condition& condition, bool want_attention, const Injection* inject) {
  check_step(step, schedule);
  json req = {{"latent", tensor_to_json(latent)},
              {"t", schedule.model_timesteps[static_cast<std::size_t>(step)]},
              {"condition", condition ? json(*condition) : json(nullptr)},
              {"want_attention", want_attention},
              {"layers", layers_}};
  if (inject && inject->lambda_att != 0.0) {
    json attn = json::object();
    for (const auto& [l, a] : inject->attention) attn[std::to_string(l)] = map_to_json(a);
    req["inject"] = {{"lambda_att", inject->lambda_att}, {"attn", std::move(attn)}};
  }
  json reply;
  try {
    reply = transport_->call(req);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(Errc::ClientError, e.what());
  }
  if (!reply.is_object() || !reply.contains("eps")) fail(Errc::ClientError, "denoiser response lacks 'eps'");
  DenoiserOutput out;
  out.eps = tensor_from_json(reply.at("eps"));
  if (!out.eps.same_shape(latent)) fail(Errc::ShapeMismatch, "denoiser eps shape differs from the latent");
  try {
    if (reply.contains("attn"))
      for (const auto& [k, v] : reply.at("attn").items()) out.attention[std::stoi(k)] = map_from_json(v);
    if (reply.contains("feat"))
      for (const auto& [k, v] : reply.at("feat").items()) out.features[std::stoi(k)] = tensor_from_json(v);
  } catch (const std::invalid_argument&) {
    fail(Errc::ClientError, "denoiser layer keys must be integers");
  }
  return out;
}

std::shared_ptr<Denoiser> make_denoiser(const json& config) {
  const std::string kind = config.value("kind", "toy");
  auto gaussian = [&] {
    GaussianDenoiserConfig g;
    g.mean = config.value("mean", g.mean);
    g.sigma = config.value("sigma", g.sigma);
    g.condition_shift = config.value("condition_shift", g.condition_shift);
    return g;
  };
  if (kind == "zero") return std::make_shared<ZeroDenoiser>();
  if (kind == "gaussian") return std::make_shared<GaussianDenoiser>(gaussian());
  if (kind == "toy") {
    ToyDenoiserConfig t;
    t.gaussian = gaussian();
    t.layers = config.value("layers", t.layers);
    t.latent_channels = config.value("latent_channels", t.latent_channels);
    t.feature_channels = config.value("feature_channels", t.feature_channels);
    t.readout_gain = config.value("readout_gain", t.readout_gain);
    t.seed = config.value("seed", t.seed);
    return std::make_shared<ToyDenoiser>(t);
  }
  if (kind == "client") {
    if (!config.contains("client")) fail(Errc::ConfigError, "client denoiser needs a 'client' transport config");
    std::shared_ptr<JsonTransport> transport = make_transport(config.at("client"));
    return std::make_shared<ClientDenoiser>(std::move(transport), config.value("layers", std::vector<int>{}));
  }
  fail(Errc::ConfigError, "unknown denoiser kind '" + kind + "'");
}

Tensor3 invert(const Tensor3& x0, Denoiser& denoiser, const NoiseSchedule& schedule, const InversionOptions& options) {
  if (!all_finite(x0.data)) fail(Errc::NonFiniteLatent, "source latent is not finite");
  Tensor3 x = x0;
  for (int t = 0; t < schedule.steps(); ++t) {
    Tensor3 eps = denoiser.predict(x, t, schedule, std::nullopt, false, nullptr).eps;
    Tensor3 next = ddim_step(x, eps, t, schedule, Direction::Invert);
    for (int k = 0; k < options.fixed_point_iterations; ++k) {
      eps = denoiser.predict(next, t + 1, schedule, std::nullopt, false, nullptr).eps;
      next = ddim_step(x, eps, t, schedule, Direction::Invert);
    }
    require_finite(next, t + 1, "inverted");
    x = std::move(next);
  }
  return x;
}

Tensor3 sample(const Tensor3& xT, Denoiser& denoiser, const NoiseSchedule& schedule) {
  Tensor3 x = xT;
  for (int t = schedule.steps(); t >= 1; --t) {
    x = ddim_step(x, denoiser.predict(x, t, schedule, std::nullopt, false, nullptr).eps, t, schedule,
                  Direction::Denoise);
    require_finite(x, t - 1, "sampled");
  }
  return x;
}

Tensor3 guided_eps(const Tensor3& eps_uncond, const Tensor3& eps_cond, double w) {
  if (!(w >= 0.0)) fail(Errc::InvalidArgument, "guidance scale must be >= 0");
  if (!eps_uncond.same_shape(eps_cond)) fail(Errc::ShapeMismatch, "guidance operands differ in shape");
  Tensor3 out = eps_uncond;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += w * (eps_cond.data[i] - eps_uncond.data[i]);
  return out;
}

Tensor3 guided_eps(Denoiser& denoiser, const Tensor3& x_t, int step, const NoiseSchedule& schedule,
                   const EmotionPrompt& prompt, double w, const Injection* inject) {
  if (!(w >= 0.0)) fail(Errc::InvalidArgument, "guidance scale must be >= 0");
  Tensor3 eps_uncond = denoiser.predict(x_t, step, schedule, std::nullopt, false, inject).eps;
  if (prompt.empty_condition()) return eps_uncond;
  const Tensor3 eps_cond = denoiser.predict(x_t, step, schedule, condition_of(prompt), false, inject).eps;
  return guided_eps(eps_uncond, eps_cond, w);
}

Tensor3 fuse(const Tensor3& edit_raw, const Tensor3& rec_raw, const Map2D& mask, FusionMode mode) {
  if (!edit_raw.same_shape(rec_raw)) fail(Errc::ShapeMismatch, "fusion operands differ in shape");
  if (mask.height != edit_raw.height || mask.width != edit_raw.width)
    fail(Errc::ShapeMismatch, "mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                  ", latent is " + std::to_string(edit_raw.height) + "x" + std::to_string(edit_raw.width));
  Tensor3 out(edit_raw.channels, edit_raw.height, edit_raw.width);
  const std::size_t plane = edit_raw.plane();
  for (std::size_t c = 0; c < edit_raw.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      const double m = mask.data[p];
      if (mode == FusionMode::Hard) {
        if (m != 0.0 && m != 1.0) fail(Errc::InvalidArgument, "hard fusion needs a binary mask");
        out.data[i] = m == 1.0 ? edit_raw.data[i] : rec_raw.data[i];
      } else {
        if (m < 0.0 || m > 1.0) fail(Errc::InvalidArgument, "soft fusion mask must lie in [0,1]");
        out.data[i] = m * edit_raw.data[i] + (1.0 - m) * rec_raw.data[i];
      }
    }
  return out;
}

Tensor3 inject_attention(const Tensor3& features, const Map2D& attention, double lambda_att) {
  if (lambda_att == 0.0) return features;
  if (attention.height == 0 || attention.width == 0) fail(Errc::ShapeMismatch, "attention map is empty");
  const Map2D a = attention.height == features.height && attention.width == features.width
                      ? attention
                      : resample_area(attention, features.height, features.width);
  Tensor3 out = features;
  const std::size_t plane = features.plane();
  for (std::size_t c = 0; c < features.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      out.data[i] = features.data[i] + lambda_att * (a.data[p] * features.data[i]);
    }
  return out;
}

std::map<int, Tensor3> inject_attention(const std::map<int, Tensor3>& features, const std::map<int, Map2D>& attention,
                                        double lambda_att, const std::vector<int>& layers) {
  std::map<int, Tensor3> out = features;
  for (int l : layers) {
    const auto f = out.find(l);
    const auto a = attention.find(l);
    if (f == out.end() || a == attention.end())
      fail(Errc::ShapeMismatch, "injection layer " + std::to_string(l) + " lacks features or attention");
    f->second = inject_attention(f->second, a->second, lambda_att);
  }
  return out;
}

void EditConfig::validate(int steps) const {
  if (!(guidance_scale >= 0.0)) fail(Errc::ConfigError, "guidance scale must be >= 0");
  if (!(lambda_att >= 0.0)) fail(Errc::ConfigError, "lambda_att must be >= 0");
  if (harmonize_steps < 0 || (steps > 0 && harmonize_steps >= steps) || (steps == 0 && harmonize_steps != 0))
    fail(Errc::ConfigError, "harmonize_steps must be in [0, T)");
  if (inversion.fixed_point_iterations < 0) fail(Errc::ConfigError, "fixed-point iterations must be >= 0");
}

EditResult edit(const Tensor3& x0, const EmotionPrompt& prompt, const Map2D& mask, Denoiser& denoiser,
                const NoiseSchedule& schedule, const EditConfig& config) {
  const int T = schedule.steps();
  config.validate(T);
  if (mask.height != x0.height || mask.width != x0.width)
    fail(Errc::ShapeMismatch, "mask must be at latent resolution");

  EditResult r;
  r.inverted = invert(x0, denoiser, schedule, config.inversion);
  r.reconstruction.kind = PathKind::Reconstruction;
  r.editing.kind = PathKind::Editing;
  r.reconstruction.states.resize(static_cast<std::size_t>(T) + 1);
  r.editing.states.resize(static_cast<std::size_t>(T) + 1);
  r.reconstruction.states[static_cast<std::size_t>(T)] = r.inverted;
  r.editing.states[static_cast<std::size_t>(T)] = r.inverted;

  const std::vector<int> layers = config.injection_layers.value_or(denoiser.layers());
  const bool injecting = config.lambda_att != 0.0 && !layers.empty();
  Tensor3 x_rec = r.inverted;
  Tensor3 x_edit = r.inverted;

  for (int t = T; t > config.harmonize_steps; --t) {
    DenoiserOutput rec = denoiser.predict(x_rec, t, schedule, std::nullopt, injecting, nullptr);
    Tensor3 rec_next = ddim_step(x_rec, rec.eps, t, schedule, Direction::Denoise);

    Injection inj{config.lambda_att, {}};
    if (injecting)
      for (int l : layers) {
        auto it = rec.attention.find(l);
        if (it == rec.attention.end())
          fail(Errc::ShapeMismatch, "denoiser returned no attention for injection layer " + std::to_string(l));
        inj.attention[l] = std::move(it->second);
      }
    const Tensor3 eps_edit =
        guided_eps(denoiser, x_edit, t, schedule, prompt, config.guidance_scale, injecting ? &inj : nullptr);
    const Tensor3 edit_raw = ddim_step(x_edit, eps_edit, t, schedule, Direction::Denoise);

    x_edit = fuse(edit_raw, rec_next, mask, config.fusion);
    x_rec = std::move(rec_next);
    require_finite(x_rec, t - 1, "reconstruction");
    require_finite(x_edit, t - 1, "editing");
    r.reconstruction.states[static_cast<std::size_t>(t - 1)] = x_rec;
    r.editing.states[static_cast<std::size_t>(t - 1)] = x_edit;
  }

  for (int t = std::min(config.harmonize_steps, T); t >= 1; --t) {
    x_edit = ddim_step(x_edit, denoiser.predict(x_edit, t, schedule, std::nullopt, false, nullptr).eps, t, schedule,
                       Direction::Denoise);
    x_rec = ddim_step(x_rec, denoiser.predict(x_rec, t, schedule, std::nullopt, false, nullptr).eps, t, schedule,
                      Direction::Denoise);
    require_finite(x_edit, t - 1, "editing");
    require_finite(x_rec, t - 1, "reconstruction");
    r.reconstruction.states[static_cast<std::size_t>(t - 1)] = x_rec;
    r.editing.states[static_cast<std::size_t>(t - 1)] = x_edit;
  }

  r.output = x_edit;
  return r;
}

Tensor3 guided_sample(const Tensor3& xT, const EmotionPrompt& prompt, Denoiser& denoiser, const NoiseSchedule& schedule,
                      double w) {
  Tensor3 x = xT;
  for (int t = schedule.steps(); t >= 1; --t) {
    x = ddim_step(x, guided_eps(denoiser, x, t, schedule, prompt, w), t, schedule, Direction::Denoise);
    require_finite(x, t - 1, "sampled");
  }
  return x;
}

json to_json(const LatentTrajectory& trajectory) {
  json states = json::array();
  for (const auto& s : trajectory.states) states.push_back(tensor_to_json(s));
  return {{"path_kind", trajectory.kind == PathKind::Reconstruction ? "reconstruction" : "editing"},
          {"states", std::move(states)}};
}

std::size_t PixelCodec::latent_height(const Image& image) const {
  if (latent_size) return *latent_size;
  return std::max<std::size_t>(1, image.height / std::max<std::size_t>(factor, 1));
}

std::size_t PixelCodec::latent_width(const Image& image) const {
  if (latent_size) return *latent_size;
  return std::max<std::size_t>(1, image.width / std::max<std::size_t>(factor, 1));
}

Tensor3 PixelCodec::encode(const Image& image) const {
  const std::size_t lh = latent_height(image);
  const std::size_t lw = latent_width(image);
  Tensor3 out(image.channels, lh, lw);
  for (std::size_t c = 0; c < image.channels; ++c) {
    Map2D plane(image.height, image.width);
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) plane.at(y, x) = image.at(y, x, c) / 127.5 - 1.0;
    set_plane(out, c, resample_area(plane, lh, lw));
  }
  return out;
}

Image PixelCodec::decode(const Image& source, const Tensor3& source_latent, const Tensor3& edited_latent) const {
  if (!source_latent.same_shape(edited_latent) || source_latent.channels != source.channels)
    fail(Errc::ShapeMismatch, "latents do not match the source image");
  Image out = source;
  for (std::size_t c = 0; c < source.channels; ++c) {
    Map2D delta(source_latent.height, source_latent.width);
    bool changed = false;
    for (std::size_t p = 0; p < delta.size(); ++p) {
      delta.data[p] = edited_latent.data[c * delta.size() + p] - source_latent.data[c * delta.size() + p];
      changed = changed || delta.data[p] != 0.0;
    }
    if (!changed) continue;
    const Map2D up = resample_bilinear(delta, source.height, source.width);
    for (std::size_t y = 0; y < source.height; ++y)
      for (std::size_t x = 0; x < source.width; ++x) {
        const double v = source.at(y, x, c) + 127.5 * up.at(y, x);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
  }
  return out;
}

}  // namespace emokg
