#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace emokg {

/// Row-major H×W map of doubles (masks, attention maps, activation maps).
struct Map2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Map2D() = default;
  Map2D(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Map2D&, const Map2D&) = default;
};

/// Channel-major C×H×W tensor. Latents and per-layer feature maps use this layout.
struct Tensor3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return height * width; }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Cosine similarity. Throws ZeroEmbedding when either norm is below 1e-12
/// and DimensionMismatch on unequal lengths.
double cosine(std::span<const double> a, std::span<const double> b);

/// Dense 1-D interpolation matrix: rows are output samples, columns input samples.
using InterpWeights = std::vector<std::vector<double>>;
InterpWeights area_weights(std::size_t in, std::size_t out);
/// Half-pixel centers (align_corners = false), edge-clamped.
InterpWeights bilinear_weights(std::size_t in, std::size_t out);

/// Resample by exact area averaging (box overlap weights). Works for both
/// up- and down-sampling and for non-integer ratios.
Map2D resample_area(const Map2D& src, std::size_t height, std::size_t width);

/// Bilinear resampling with half-pixel centers (align_corners = false).
Map2D resample_bilinear(const Map2D& src, std::size_t height, std::size_t width);

bool all_finite(std::span<const double> values);

}  // namespace emokg
