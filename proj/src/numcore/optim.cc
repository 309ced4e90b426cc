// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/optim.h"

#include <cmath>

#include "msfnet/error.h"

namespace msf {

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const auto t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  const double lr = options_.lr;
  const double decay = lr * options_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * gi;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      w[i] -= lr * update + decay * w[i];
    }
    require_finite(w, "adam update");
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::restore(std::int64_t steps, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw DataError("optimizer state does not match parameter count");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto n = static_cast<std::size_t>(params_[k].numel());
    if (m[k].size() != n || v[k].size() != n) {
      throw DataError("optimizer state does not match parameter sizes");
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace msf
