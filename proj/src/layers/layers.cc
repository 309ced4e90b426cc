// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/layers.h"

#include <cmath>

#include "msfnet/ops.h"

namespace msf::nn {

Tensor Initializer::normal(Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng_);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor Initializer::he(Shape shape, std::int64_t fan_in) {
  return normal(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor Initializer::lecun(Shape shape, std::int64_t fan_in) {
  return normal(std::move(shape), std::sqrt(1.0 / static_cast<double>(fan_in)));
}

Tensor Initializer::zeros(Shape shape) {
  return Tensor::zeros(std::move(shape), true);
}

Tensor Initializer::constant(Shape shape, double value) {
  return Tensor::full(std::move(shape), value, true);
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, int padding_,
               Initializer& init)
    : weight(init.he({out, in, kernel, kernel}, in * kernel * kernel)),
      bias(init.zeros({out})),
      stride(stride_),
      padding(padding_) {}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight, bias, stride, padding);
}

void Conv2d::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

ConvTranspose2d::ConvTranspose2d(int in, int out, int kernel, int stride_,
                                 int padding_, int output_padding_,
                                 Initializer& init)
    : weight(init.he({in, out, kernel, kernel},
                     // Each output cell receives about in*K*K/S^2 terms.
                     std::max<std::int64_t>(1, in * kernel * kernel /
                                                   (stride_ * stride_)))),
      bias(init.zeros({out})),
      stride(stride_),
      padding(padding_),
      output_padding(output_padding_) {}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  return ops::conv_transpose2d(x, weight, bias, stride, padding,
                               output_padding);
}

void ConvTranspose2d::collect(NamedParams& out,
                              const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Linear::Linear(int in, int out, Initializer& init)
    : weight(init.lecun({in, out}, in)), bias(init.zeros({out})) {}

Tensor Linear::forward(const Tensor& x) const {
  return ops::add(ops::matmul(x, weight), bias);
}

void Linear::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int dim)
    : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const {
  return ops::layernorm(x, gamma, beta, eps, -1);
}

void LayerNorm::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

}  // namespace msf::nn
