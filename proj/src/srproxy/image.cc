// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/image.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "msfnet/error.h"

namespace msf::image {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Raster::Raster(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(w) * h * c, fill) {
  if (w <= 0 || h <= 0 || (c != 3 && c != 4)) {
    throw ShapeError("raster needs positive dims and 3 or 4 channels");
  }
}

Raster read_png(const std::string& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(path + ": not a PNG file");
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Raster raster;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path + ": corrupt PNG data");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  raster = Raster(static_cast<int>(png_get_image_width(png, info)),
                  static_cast<int>(png_get_image_height(png, info)),
                  channels == 4 ? 4 : 3);
  if (channels != 3 && channels != 4) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path + ": unsupported channel count");
  }
  rows.resize(static_cast<std::size_t>(raster.height));
  for (int y = 0; y < raster.height; ++y) {
    rows[y] = raster.pixels.data() +
              static_cast<std::size_t>(y) * raster.width * raster.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raster;
}

void write_png(const Raster& raster, const std::string& path) {
  File file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write image " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(raster.height));
  for (int y = 0; y < raster.height; ++y) {
    rows[y] = const_cast<png_bytep>(raster.pixels.data()) +
              static_cast<std::size_t>(y) * raster.width * raster.channels;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, raster.width, raster.height, 8,
               raster.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor to_tensor(const Raster& raster) {
  const auto h = raster.height, w = raster.width;
  std::vector<double> v(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(static_cast<std::size_t>(c) * h + y) * w + x] =
            raster.at(x, y, c) / 255.0;
  return Tensor::from({3, h, w}, std::move(v));
}

Raster to_raster(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("to_raster needs a [3 x H x W] image, got " +
                     shape_string(image.shape()));
  }
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  Raster r(w, h, 3);
  auto d = image.data();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = std::clamp(d[(static_cast<std::size_t>(c) * h + y) * w + x], 0.0, 1.0);
        r.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return r;
}

}  // namespace msf::image
