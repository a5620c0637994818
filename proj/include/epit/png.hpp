// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "epit/error.hpp"

namespace epit::png {

/// 8-bit interleaved raster.
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void on_error(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void on_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8-bit gray or RGB image. Palette and low-bit images are expanded,
/// 16-bit samples are reduced to 8 bits, alpha is dropped.
inline Raster read(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("png: cannot open '" + path + "'");
  std::string message;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, detail::on_error, detail::on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: libpng initialisation failed");
  }
  Raster raster;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode '" + path + "': " + message);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raster.height = png_get_image_height(png, info);
  raster.width = png_get_image_width(png, info);
  raster.channels = png_get_channels(png, info);
  raster.pixels.resize(raster.height * raster.width * raster.channels);
  rows.resize(raster.height);
  for (std::size_t r = 0; r < raster.height; ++r) {
    rows[r] = raster.pixels.data() + r * raster.width * raster.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (raster.channels != 1 && raster.channels != 3) {
    throw DataError("png: unsupported channel count " + std::to_string(raster.channels) + " in '" +
                    path + "'");
  }
  return raster;
}

inline void write(const std::string& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw DataError("png: can only write gray or RGB rasters");
  }
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("png: cannot create '" + path + "'");
  std::string message;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, detail::on_error, detail::on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: libpng initialisation failed");
  }
  std::vector<png_bytep> rows(raster.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode '" + path + "': " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width),
               static_cast<png_uint_32>(raster.height), 8,
               raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < raster.height; ++r) {
    rows[r] = const_cast<png_bytep>(raster.pixels.data() + r * raster.width * raster.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace epit::png
