// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_RUN_CONFIG_H_
#define MSFNET_RUN_CONFIG_H_

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msfnet/bridge.h"

namespace msf {

/// Unknown keys, wrong value types and out-of-range settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything needed to rebuild a model and repeat a run. Serialized as a
/// flat JSON object; see README for the key list.
struct RunConfig {
  // Optimisation.
  int batch_size = 4;
  int epochs = 30;
  /// When > 0, training runs exactly this many steps and ignores epochs.
  int max_steps = 0;
  double learning_rate = 5e-5;
  double weight_decay = 1e-7;
  double dropout = 0.5;
  std::uint64_t seed = 0;

  // Inference.
  double conf_thresh = 0.5;
  double nms_thresh = 0.4;
  /// Decode cut-off for the candidates ranked by average precision.
  double candidate_thresh = 1e-3;

  // Data.
  int num_class = 3;
  int image_width = 48;   // original images
  int image_height = 48;
  int sr_factor = 2;
  std::string sr_method = "bilinear";
  std::string sr_command;

  // Ablations.
  bool text_enabled = true;
  bool sr_enabled = true;

  // Text.
  int word_maxlen = 41;
  int sent_maxlen = 35;
  int bucket_count = 4096;

  // Model.
  int token_dim = 32;
  int heads = 4;
  int layers = 2;
  int ffn_expansion = 4;
  bool positional = false;
  bool duplicate_text = false;
  std::array<int, 2> stem_channels = {8, 16};
  std::array<int, 3> backbone_channels = {64, 32, 16};
  /// Empty picks {5, 9, 13} when the coarsest map allows it, else {3, 5, 7}.
  std::vector<int> spp_kernels;
  /// Nine (w, h) pairs in model-input pixels; empty uses the defaults.
  std::vector<std::array<double, 2>> anchors;
  bool objectness = true;
  double negative_weight = 0.5;
  double objectness_prior = 0.01;
  double head_init_std = 0.01;
  /// Empty uses the preset matching the pyramid size.
  std::optional<bridge::BridgeSpec> bridge;

  int input_width() const { return image_width * sr_factor; }
  int input_height() const { return image_height * sr_factor; }

  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Keys missing from `j` keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// Applies `--key value` pairs. A value is parsed as JSON when possible and
/// taken as a plain string otherwise.
void apply_overrides(RunConfig& config,
                     const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace msf

#endif  // MSFNET_RUN_CONFIG_H_
