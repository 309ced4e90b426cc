// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_OPS_H_
#define MSFNET_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "msfnet/tensor.h"

// Differentiable tensor operations. Every op validates shapes before
// allocating and, when a tape is active and an input requires a gradient,
// records its backward rule.
namespace msf::ops {

enum class Elementwise { kAdd, kSub, kMul, kRelu, kSigmoid, kScale };

/// Binary kinds accept equal shapes or one operand whose shape is a suffix of
/// the other's (expansion along leading dims only). kScale multiplies `a` by
/// `factor`; unary kinds ignore `b`.
Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b = {},
                   double factor = 1.0);

inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(Elementwise::kAdd, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(Elementwise::kSub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(Elementwise::kMul, a, b);
}
inline Tensor relu(const Tensor& a) {
  return elementwise(Elementwise::kRelu, a);
}
inline Tensor sigmoid(const Tensor& a) {
  return elementwise(Elementwise::kSigmoid, a);
}
inline Tensor scale(const Tensor& a, double factor) {
  return elementwise(Elementwise::kScale, a, {}, factor);
}

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis);

// Output extent formulas. Each throws ShapeError when the result would not
// be positive or the parameters are out of their domain.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t padding, std::int64_t stride);
std::int64_t conv_transpose_output_extent(std::int64_t in, std::int64_t kernel,
                                          std::int64_t padding,
                                          std::int64_t stride,
                                          std::int64_t output_padding);
std::int64_t pool_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t stride, std::int64_t padding = 0);

/// x: [C_in x H x W], kernel: [C_out x C_in x K x K], bias: [C_out] or
/// undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::int64_t stride, std::int64_t padding);

/// x: [C_in x H x W], kernel: [C_in x C_out x K x K] (the layout of the
/// matching forward convolution's kernel, transposed in its channel axes).
Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel,
                        const Tensor& bias, std::int64_t stride,
                        std::int64_t padding, std::int64_t output_padding);

/// Padding cells act as -inf. Gradient goes to the window argmax; ties pick
/// the lowest flat index.
Tensor maxpool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                 std::int64_t padding = 0);

enum class AdaptiveWindows {
  kStrict,        // target must not exceed the input extent
  kAllowOverlap,  // target may exceed the input; windows then overlap
};

/// Output cell i covers input rows [floor(i*H/th), ceil((i+1)*H/th)).
Tensor adaptive_maxpool2d(const Tensor& x, std::int64_t target_h,
                          std::int64_t target_w,
                          AdaptiveWindows windows = AdaptiveWindows::kStrict);

Tensor upsample_nearest(const Tensor& x, std::int64_t factor);

/// Normalizes each slice along `axis`; gamma and beta have the axis extent.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps, int axis = -1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end);
Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row lookup: out[i] = table[ids[i]]. Gradients land on the selected rows.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

/// Inverted dropout with a seeded mask; p == 0 returns x unchanged.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

}  // namespace msf::ops

#endif  // MSFNET_OPS_H_
