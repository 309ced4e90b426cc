// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_IMAGE_H_
#define MSFNET_IMAGE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "msfnet/tensor.h"

namespace msf::image {

/// 8-bit interleaved raster, RGB (3 channels) or RGBA (4 channels).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Decodes any 8-bit PNG into RGB or RGBA (palette and grey are expanded).
/// Throws DataError on a missing or corrupt file.
Raster read_png(const std::string& path);
void write_png(const Raster& raster, const std::string& path);

/// [3 x H x W] in [0, 1]; alpha is dropped.
Tensor to_tensor(const Raster& raster);
/// Clamps to [0, 1] and rounds to the nearest 8-bit level.
Raster to_raster(const Tensor& image);

}  // namespace msf::image

#endif  // MSFNET_IMAGE_H_
