// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/tape.h"

#include "msfnet/error.h"

namespace msf {

namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     (loss.defined() ? shape_string(loss.shape())
                                     : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a loss that does not require grad");
  }
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw std::logic_error("backward() with no active tape");
  tape->backward(loss);
}

bool needs_grad(std::initializer_list<Tensor> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record_op(const Tensor& out, const std::vector<Tensor>& inputs,
               std::function<void()> rule) {
  Tape* tape = Tape::current();
  if (tape == nullptr) return;
  Tape::Entry entry;
  bool any = false;
  for (const auto& t : inputs) {
    if (!t.defined()) continue;
    any = any || t.requires_grad();
    entry.inputs.push_back(t.shared());
  }
  if (!any) return;
  out.impl()->requires_grad = true;
  entry.output = out.shared();
  entry.backward = std::move(rule);
  tape->record(std::move(entry));
}

void record_op(const Tensor& out, std::initializer_list<Tensor> inputs,
               std::function<void()> rule) {
  record_op(out, std::vector<Tensor>(inputs), std::move(rule));
}

}  // namespace msf
