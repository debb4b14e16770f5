#include "emokg/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <png.h>

#include "emokg/error.hpp"

namespace emokg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(Errc::IoError, "cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(Errc::IoError, path.string() + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) fail(Errc::IoError, "corrupt PNG data in " + path.string());

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) fail(Errc::IoError, "unsupported PNG channel layout in " + path.string());
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) fail(Errc::InvalidArgument, "PNG writer supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels)
    fail(Errc::ShapeMismatch, "image buffer does not match its dimensions");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(Errc::IoError, "cannot write image " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) fail(Errc::IoError, "failed to encode PNG " + path.string());

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels));
  png_write_end(png, nullptr);
}

Map2D to_gray(const Image& image) {
  Map2D out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      if (image.channels == 1) {
        out.at(y, x) = image.at(y, x, 0);
      } else {
        out.at(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
      }
    }
  return out;
}

Image map_to_image(const Map2D& map) {
  Image img(map.width, map.height, 1);
  for (std::size_t i = 0; i < map.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.data[i], 0.0, 1.0) * 255.0));
  return img;
}

Map2D image_to_map(const Image& image) {
  Map2D g = to_gray(image);
  for (auto& v : g.data) v /= 255.0;
  return g;
}

}  // namespace emokg
