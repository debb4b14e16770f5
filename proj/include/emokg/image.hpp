#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "emokg/tensor.hpp"

namespace emokg {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Reads any PNG, converting to 8-bit gray or RGB (alpha dropped, palettes expanded).
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

/// Luma (0.299 R + 0.587 G + 0.114 B) in [0, 255].
Map2D to_gray(const Image& image);
/// Binary or [0,1] map to an 8-bit gray image (value * 255, rounded).
Image map_to_image(const Map2D& map);
/// Gray image to [0,1] map.
Map2D image_to_map(const Image& image);

}  // namespace emokg
