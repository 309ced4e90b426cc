// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_PIPELINE_H_
#define MSFNET_PIPELINE_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msfnet/checkpoint.h"
#include "msfnet/dataset.h"
#include "msfnet/evalkit.h"
#include "msfnet/model.h"
#include "msfnet/optim.h"

namespace msf {

struct StepLoss {
  std::int64_t step = 0;
  int epoch = 0;
  double total = 0.0;  // L_PTI, batch mean
  double box = 0.0;
  double objective = 0.0;
};

/// Mini-batch Adam training. The batch order of every epoch and every
/// dropout mask derive from (seed, step), so a run restored from a
/// checkpoint continues exactly where the original would have.
class Trainer {
 public:
  /// Fresh model. Throws DataError when `samples` is empty.
  Trainer(const RunConfig& config, const std::vector<const data::Sample*>& samples);
  /// Restores weights, optimizer moments and the step counter. Schedule keys
  /// (epochs, max_steps, batch_size) may differ from the saved run.
  Trainer(const ckpt::Checkpoint& checkpoint, const RunConfig& schedule,
          const std::vector<const data::Sample*>& samples);

  std::int64_t steps_per_epoch() const;
  std::int64_t total_steps() const;
  std::int64_t step_index() const { return step_; }
  bool done() const { return step_ >= total_steps(); }

  /// One optimizer step over the next batch; the gradient is the batch mean.
  /// Throws NumericError naming the step when a loss is not finite.
  StepLoss step();
  /// Steps until done(), reporting each step to `on_step` when set.
  std::vector<StepLoss> run(const std::function<void(const StepLoss&)>& on_step = {});

  /// Batch-mean loss terms of the next step without updating anything.
  StepLoss peek() const;

  ckpt::Checkpoint checkpoint() const;
  const Model& model() const { return *model_; }

 private:
  std::vector<std::size_t> batch(std::int64_t step) const;
  std::uint64_t dropout_seed(std::int64_t step, std::size_t slot) const;

  RunConfig schedule_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<Adam> adam_;
  std::vector<PreparedSample> samples_;
  std::int64_t step_ = 0;
};

/// Rebuilds the model stored in a checkpoint.
std::unique_ptr<Model> load_model(const ckpt::Checkpoint& checkpoint);

struct ImageDetections {
  std::string image;
  std::vector<Detection> detections;
};

struct Evaluation {
  eval::EvalReport report;
  std::vector<ImageDetections> images;
};

/// Forward, decode, suppress and score every sample. Throws DataError for
/// an empty selection or a class id the model cannot predict.
Evaluation evaluate_model(const Model& model, const std::vector<const data::Sample*>& samples);

/// `class_id confidence x1 y1 x2 y2` per line, six decimals.
std::string format_detections(const std::vector<Detection>& dets);

}  // namespace msf

#endif  // MSFNET_PIPELINE_H_
