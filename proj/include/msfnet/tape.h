// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_TAPE_H_
#define MSFNET_TAPE_H_

#include <functional>
#include <memory>
#include <vector>

#include "msfnet/tensor.h"

namespace msf {

/// Records differentiable operations in execution order so a reverse sweep
/// visits every node after all of its consumers.
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; ops executed while no tape is active do not record and
/// run in inference mode. A tape must not be shared between threads.
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void()> backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  /// Gradients accumulate into leaves; call zero_grad between steps.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  static Tape* current();

  void record(Entry entry);

 private:
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

/// backward() on the calling thread's active tape.
void backward(const Tensor& loss);

/// Registers `rule` for `out` when a tape is active and any input requires a
/// gradient; marks `out` as requiring a gradient in that case.
void record_op(const Tensor& out, std::initializer_list<Tensor> inputs,
               std::function<void()> rule);
void record_op(const Tensor& out, const std::vector<Tensor>& inputs,
               std::function<void()> rule);

/// True when a tape is active and at least one tensor requires a gradient.
bool needs_grad(std::initializer_list<Tensor> inputs);

}  // namespace msf

#endif  // MSFNET_TAPE_H_
