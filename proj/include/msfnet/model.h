// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_MODEL_H_
#define MSFNET_MODEL_H_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msfnet/backbone.h"
#include "msfnet/boxes.h"
#include "msfnet/bridge.h"
#include "msfnet/dataset.h"
#include "msfnet/detect.h"
#include "msfnet/fusion.h"
#include "msfnet/layers.h"
#include "msfnet/run_config.h"
#include "msfnet/textenc.h"

namespace msf {

/// Model-ready view of one sample: both streams at model-input size and
/// ground truth scaled into model-input pixels.
struct PreparedSample {
  Tensor lr_input;  // nearest upscale of the original
  Tensor sr_input;  // super-resolved stream
  std::vector<int> tokens;  // empty when text is disabled or absent
  std::vector<GroundTruth> truths;
  std::vector<GroundTruth> original_truths;
};

/// The full detector: shared backbone over both streams, TIC, text
/// embedding, fusion encoder, ITC and the detection neck and heads.
class Model {
 public:
  explicit Model(const RunConfig& config);

  struct Output {
    detect::RawPredictions raw;
    fusion::SequenceLayout layout;
  };

  Output forward(const PreparedSample& sample, bool training, std::uint64_t dropout_seed) const;

  /// Raises DataError when the sample does not fit the configuration.
  PreparedSample prepare(const data::Sample& sample) const;

  detect::LossTerms loss(const Output& out, const PreparedSample& sample) const;

  /// Decoded, suppressed detections in original-image pixels.
  std::vector<Detection> predict(const PreparedSample& sample, double conf_thresh) const;

  /// Every trainable tensor with a stable dotted name.
  nn::NamedParams parameters() const;

  const RunConfig& config() const { return config_; }
  const detect::AnchorSet& anchors() const { return anchors_; }
  const text::TokenizerOptions& tokenizer() const { return tokenizer_; }

 private:
  RunConfig config_;
  text::TokenizerOptions tokenizer_;
  detect::AnchorSet anchors_;
  nn::Initializer init_;

 public:
  text::EmbeddingTable embedding;
  Backbone backbone;
  bridge::Bridge converter;
  fusion::FusionModel fusion;
  detect::Detector detector;
};

/// The configuration with derived defaults (bridge, SPP kernels, anchors)
/// written out, as stored in checkpoints.
RunConfig resolved_config(const RunConfig& config);

}  // namespace msf

#endif  // MSFNET_MODEL_H_
