// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_BACKBONE_H_
#define MSFNET_BACKBONE_H_

#include <array>
#include <cstdint>

#include "msfnet/layers.h"
#include "msfnet/tensor.h"

namespace msf {

/// Three-scale feature pyramid. Index 0 is the coarsest map (stride 32),
/// index 2 the finest (stride 8).
struct ScalePyramid {
  std::array<Tensor, 3> levels;

  const Tensor& v1() const { return levels[0]; }
  const Tensor& v2() const { return levels[1]; }
  const Tensor& v3() const { return levels[2]; }
  Tensor& operator[](int i) { return levels[static_cast<std::size_t>(i)]; }
  const Tensor& operator[](int i) const {
    return levels[static_cast<std::size_t>(i)];
  }
};

inline constexpr std::array<int, 3> kPyramidStrides = {32, 16, 8};

struct BackboneConfig {
  std::array<int, 2> stem_channels = {8, 16};
  std::array<int, 3> channels = {64, 32, 16};  // (C1, C2, C3)
};

/// Five stride-2 conv(K3, P1) + relu blocks; the last three blocks emit
/// v3, v2 and v1.
class Backbone {
 public:
  Backbone(const BackboneConfig& config, nn::Initializer& init);

  /// image: [3 x H x W] with H and W divisible by 32.
  ScalePyramid forward(const Tensor& image) const;
  void collect(nn::NamedParams& out, const std::string& prefix) const;
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  std::array<nn::Conv2d, 5> blocks_;
};

}  // namespace msf

#endif  // MSFNET_BACKBONE_H_
