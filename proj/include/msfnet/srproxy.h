// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_SRPROXY_H_
#define MSFNET_SRPROXY_H_

#include <string>

#include "msfnet/tensor.h"

// Dual image streams: the original image plus a super-resolved counterpart.
// A learned super-resolution model is not part of this library; the
// `kExternal` method hands the image to a user command instead.
namespace msf::sr {

enum class UpscaleMethod { kNearest, kBilinear, kExternal };

UpscaleMethod parse_method(const std::string& name);
std::string method_name(UpscaleMethod method);

/// Environment variable consulted when no external command is configured.
inline constexpr const char* kExternalCommandEnv = "MSFNET_SR_COMMAND";

struct UpscaleOptions {
  UpscaleMethod method = UpscaleMethod::kBilinear;
  /// Invoked as `<command> <in.png> <out.png> <factor>`.
  std::string external_command;
};

/// image: [3 x H x W] in [0, 1]; factor in {2, 4}. Output is [3 x fH x fW],
/// clamped to [0, 1]. Bilinear uses half-pixel centres with edge clamping.
Tensor upscale(const Tensor& image, int factor, const UpscaleOptions& options);

/// Separable Gaussian blur (radius ceil(3 sigma), edge clamped) followed by
/// factor x factor average pooling. sigma == 0 skips the blur.
Tensor degrade(const Tensor& image, int factor, double blur_sigma);

struct ImagePair {
  Tensor original;
  Tensor super_resolved;
  int factor = 2;
};

/// With `sr_enabled == false` the super-resolved stream is a nearest
/// upscale, so both streams keep their shapes.
ImagePair make_pair(const Tensor& original, int factor,
                    const UpscaleOptions& options, bool sr_enabled);

}  // namespace msf::sr

#endif  // MSFNET_SRPROXY_H_
