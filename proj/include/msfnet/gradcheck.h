// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_GRADCHECK_H_
#define MSFNET_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "msfnet/tensor.h"

namespace msf {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates probed per input; <= 0 probes every coordinate. When
  /// limited, coordinates are drawn with a seeded RNG.
  std::int64_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|,
  /// floor); the floor keeps near-zero gradients from dominating.
  double denominator_floor = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::int64_t coords_checked = 0;
  /// Coordinates whose stencil [x - eps, x + eps] changed the branch of a
  /// piecewise op; they are replaced by other coordinates when sampling.
  std::int64_t coords_skipped = 0;
};

/// Branch signatures of piecewise-linear ops (relu sign pattern, max-pool
/// argmax). While a recorder is alive on the calling thread those ops fold
/// their branch choices into its digest.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;
  std::uint64_t digest() const { return digest_; }

 private:
  std::uint64_t digest_ = 0;
  BranchRecorder* previous_;
  friend void record_branches(std::span<const std::int64_t> choices);
};

/// No-op unless a recorder is active.
bool recording_branches();
void record_branches(std::span<const std::int64_t> choices);

/// Compares reverse-mode gradients of the scalar `loss_fn()` with central
/// finite differences for every tensor in `inputs`. A coordinate is only
/// compared when the branch signatures at x - eps, x and x + eps agree, so
/// every stencil lies on one smooth piece. `loss_fn` must be
/// deterministic and must not open its own tape. Inputs keep their values;
/// their gradients are left holding the analytic result.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace msf

#endif  // MSFNET_GRADCHECK_H_
