// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_LAYERS_H_
#define MSFNET_LAYERS_H_

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "msfnet/tensor.h"

// Small trainable building blocks shared by the network modules.
namespace msf::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Seeded weight initialisation; draws happen in construction order so a
/// fixed seed reproduces a model exactly.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// N(0, gain^2 / fan_in) with gain sqrt(2) (ReLU networks).
  Tensor he(Shape shape, std::int64_t fan_in);
  /// N(0, 1 / fan_in).
  Tensor lecun(Shape shape, std::int64_t fan_in);
  Tensor zeros(Shape shape);
  Tensor constant(Shape shape, double value);
  Tensor normal(Shape shape, double stddev);

 private:
  std::mt19937_64 rng_;
};

struct Conv2d {
  Tensor weight;  // [out x in x K x K]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int padding, Initializer& init);
  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct ConvTranspose2d {
  Tensor weight;  // [in x out x K x K]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;
  int output_padding = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, int stride, int padding,
                  int output_padding, Initializer& init);
  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

/// Row-wise affine map: x [L x in] -> x W + b, W [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int in, int out, Initializer& init);
  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Tensor forward(const Tensor& x) const;
  void collect(NamedParams& out, const std::string& prefix) const;
};

}  // namespace msf::nn

#endif  // MSFNET_LAYERS_H_
