// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_OPTIM_H_
#define MSFNET_OPTIM_H_

#include <cstdint>
#include <vector>

#include "msfnet/tensor.h"

namespace msf {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled: each step also subtracts lr * weight_decay * param.
  double weight_decay = 1e-7;
};

/// Adam with decoupled weight decay. Moments start at zero; parameters
/// without a gradient buffer are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment access for checkpointing.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t steps_ = 0;
};

}  // namespace msf

#endif  // MSFNET_OPTIM_H_
