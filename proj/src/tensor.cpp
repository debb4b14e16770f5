#include "emokg/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "emokg/error.hpp"

namespace emokg {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::DimensionMismatch, "dot of vectors with different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::DimensionMismatch, "cosine of vectors with different lengths");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < 1e-12 || nb < 1e-12) fail(Errc::ZeroEmbedding, "cosine with a zero-norm vector");
  return dot(a, b) / (na * nb);
}

using Weights = InterpWeights;

Weights area_weights(std::size_t in, std::size_t out) {
  Weights w(out, std::vector<double>(in, 0.0));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    for (std::size_t i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0) w[o][i] = overlap / scale;
    }
  }
  return w;
}

Weights bilinear_weights(std::size_t in, std::size_t out) {
  Weights w(out, std::vector<double>(in, 0.0));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    w[o][i0] += 1.0 - frac;
    w[o][i1] += frac;
  }
  return w;
}

namespace {

Map2D separable(const Map2D& src, const Weights& wy, const Weights& wx) {
  const std::size_t h = wy.size();
  const std::size_t w = wx.size();
  Map2D tmp(src.height, w);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t ox = 0; ox < w; ++ox) {
      double s = 0.0;
      for (std::size_t x = 0; x < src.width; ++x) s += wx[ox][x] * src.at(y, x);
      tmp.at(y, ox) = s;
    }
  Map2D out(h, w);
  for (std::size_t oy = 0; oy < h; ++oy)
    for (std::size_t y = 0; y < src.height; ++y) {
      const double k = wy[oy][y];
      if (k == 0.0) continue;
      for (std::size_t ox = 0; ox < w; ++ox) out.at(oy, ox) += k * tmp.at(y, ox);
    }
  return out;
}

void check_resample(const Map2D& src, std::size_t height, std::size_t width) {
  if (src.height == 0 || src.width == 0 || height == 0 || width == 0)
    fail(Errc::ShapeMismatch, "cannot resample an empty map");
}

}  // namespace

Map2D resample_area(const Map2D& src, std::size_t height, std::size_t width) {
  check_resample(src, height, width);
  if (src.height == height && src.width == width) return src;
  return separable(src, area_weights(src.height, height), area_weights(src.width, width));
}

Map2D resample_bilinear(const Map2D& src, std::size_t height, std::size_t width) {
  check_resample(src, height, width);
  if (src.height == height && src.width == width) return src;
  return separable(src, bilinear_weights(src.height, height), bilinear_weights(src.width, width));
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace emokg
