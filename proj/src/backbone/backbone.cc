// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/backbone.h"

#include <string>

#include "msfnet/error.h"
#include "msfnet/ops.h"

namespace msf {

Backbone::Backbone(const BackboneConfig& config, nn::Initializer& init)
    : config_(config) {
  const std::array<int, 6> ch = {3,
                                 config.stem_channels[0],
                                 config.stem_channels[1],
                                 config.channels[2],
                                 config.channels[1],
                                 config.channels[0]};
  for (int c : ch) {
    if (c <= 0) throw ShapeError("backbone: channel counts must be positive");
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i] = nn::Conv2d(ch[i], ch[i + 1], 3, 2, 1, init);
  }
}

ScalePyramid Backbone::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("backbone: expected a [3 x H x W] image, got " +
                     shape_string(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw ShapeError("backbone: input " + std::to_string(image.dim(1)) + "x" +
                     std::to_string(image.dim(2)) +
                     " is not divisible by 32");
  }
  ScalePyramid p;
  Tensor x = image;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = ops::relu(blocks_[i].forward(x));
    if (i >= 2) p.levels[4 - i] = x;
  }
  return p;
}

void Backbone::collect(nn::NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  }
}

}  // namespace msf
