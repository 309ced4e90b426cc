// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msfnet/tape.h"

namespace msf {

namespace {

thread_local BranchRecorder* active_recorder = nullptr;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const std::function<Tensor()>& loss_fn) {
  BranchRecorder recorder;
  const double value = loss_fn().item();
  return {value, recorder.digest()};
}

}  // namespace

BranchRecorder::BranchRecorder() : previous_(active_recorder) {
  active_recorder = this;
}

BranchRecorder::~BranchRecorder() { active_recorder = previous_; }

bool recording_branches() { return active_recorder != nullptr; }

void record_branches(std::span<const std::int64_t> choices) {
  if (active_recorder == nullptr) return;
  std::uint64_t h = mix(choices.size());
  for (auto c : choices) h = mix(h ^ static_cast<std::uint64_t>(c));
  active_recorder->digest_ = mix(active_recorder->digest_ ^ h);
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> probes = inputs;
  for (auto& t : probes) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (auto& t : probes) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
      }
    }
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const std::uint64_t base = evaluate(loss_fn).signature;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    Tensor& t = probes[k];
    std::vector<std::int64_t> coords(static_cast<std::size_t>(t.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    const bool sampled = options.max_coords_per_input > 0 &&
                         options.max_coords_per_input < t.numel();
    if (sampled) std::shuffle(coords.begin(), coords.end(), rng);
    std::int64_t compared = 0;
    auto values = t.mutable_data();
    for (auto c : coords) {
      if (sampled && compared == options.max_coords_per_input) break;
      const double saved = values[c];
      values[c] = saved + options.eps;
      const auto up = evaluate(loss_fn);
      values[c] = saved - options.eps;
      const auto down = evaluate(loss_fn);
      values[c] = saved;
      if (up.signature != base || down.signature != base) {
        ++result.coords_skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * options.eps);
      const double a = analytic[k][c];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(
          {std::abs(a), std::abs(numeric), options.denominator_floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.coords_checked;
      ++compared;
    }
  }
  return result;
}

}  // namespace msf
