// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_GRADCHECK_SUITE_H_
#define MSFNET_GRADCHECK_SUITE_H_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "msfnet/run_config.h"

namespace msf {

struct ComponentCheck {
  std::string name;
  std::string kind;  // op, module or model
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::int64_t coords = 0;
  /// Probed coordinates whose stencil crossed a relu or max-pool branch.
  std::int64_t skipped = 0;
  bool passed = false;
};

struct GradCheckReport {
  double threshold = 1e-4;
  std::vector<ComponentCheck> components;
  bool passed() const;
};

/// Names of every differentiable op exercised by the suite.
const std::vector<std::string>& registered_ops();

struct SuiteOptions {
  double threshold = 1e-4;
  /// Coordinates probed per parameter tensor in module and model checks.
  std::int64_t coords_per_tensor = 4;
  /// Test fixture: the named component's backward pass is scaled by 1.5.
  std::string corrupt;
};

/// Central-difference checks of every op, every module and the end-to-end
/// model built from `config` (toy dims expected).
GradCheckReport run_gradcheck_suite(const RunConfig& config, const SuiteOptions& options = {});

nlohmann::ordered_json to_json(const GradCheckReport& report);

}  // namespace msf

#endif  // MSFNET_GRADCHECK_SUITE_H_
