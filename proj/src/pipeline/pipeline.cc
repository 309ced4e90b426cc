// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/pipeline.h"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "msfnet/error.h"
#include "msfnet/ops.h"
#include "msfnet/tape.h"

namespace msf {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

AdamOptions adam_options(const RunConfig& c) {
  AdamOptions o;
  o.lr = c.learning_rate;
  o.weight_decay = c.weight_decay;
  return o;
}

std::vector<Tensor> tensors_of(const nn::NamedParams& params) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

void copy_into(const Tensor& src, Tensor& dst, const std::string& name) {
  if (src.shape() != dst.shape()) {
    throw DataError("checkpoint tensor '" + name + "' is " + shape_string(src.shape()) +
                    ", model expects " + shape_string(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Trainer::Trainer(const RunConfig& config, const std::vector<const data::Sample*>& samples)
    : schedule_(config), model_(std::make_unique<Model>(config)) {
  if (samples.empty()) throw DataError("training split is empty");
  for (const auto* s : samples) samples_.push_back(model_->prepare(*s));
  adam_ = std::make_unique<Adam>(tensors_of(model_->parameters()), adam_options(config));
}

Trainer::Trainer(const ckpt::Checkpoint& checkpoint, const RunConfig& schedule,
                 const std::vector<const data::Sample*>& samples)
    : model_(load_model(checkpoint)) {
  if (samples.empty()) throw DataError("training split is empty");
  schedule_ = model_->config();
  schedule_.epochs = schedule.epochs;
  schedule_.max_steps = schedule.max_steps;
  schedule_.batch_size = schedule.batch_size;
  for (const auto* s : samples) samples_.push_back(model_->prepare(*s));
  const auto params = model_->parameters();
  adam_ = std::make_unique<Adam>(tensors_of(params), adam_options(model_->config()));
  std::vector<std::vector<double>> m, v;
  for (const auto& [name, t] : params) {
    const auto& cm = checkpoint.get("adam.m." + name);
    const auto& cv = checkpoint.get("adam.v." + name);
    if (cm.shape() != t.shape() || cv.shape() != t.shape())
      throw DataError("checkpoint optimizer state for '" + name + "' has the wrong shape");
    m.push_back(values(cm));
    v.push_back(values(cv));
  }
  const auto& meta = checkpoint.meta;
  step_ = meta.at("step").get<std::int64_t>();
  adam_->restore(meta.at("optimizer_steps").get<std::int64_t>(), std::move(m), std::move(v));
}

std::int64_t Trainer::steps_per_epoch() const {
  const auto n = static_cast<std::int64_t>(samples_.size());
  return (n + schedule_.batch_size - 1) / schedule_.batch_size;
}

std::int64_t Trainer::total_steps() const {
  return schedule_.max_steps > 0 ? schedule_.max_steps : schedule_.epochs * steps_per_epoch();
}

std::vector<std::size_t> Trainer::batch(std::int64_t step) const {
  const auto per_epoch = steps_per_epoch();
  const auto epoch = static_cast<std::uint64_t>(step / per_epoch);
  const auto b = static_cast<std::size_t>(step % per_epoch);
  std::vector<std::size_t> perm(samples_.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix(model_->config().seed ^ mix(epoch)));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  const auto bs = static_cast<std::size_t>(schedule_.batch_size);
  const auto begin = b * bs;
  const auto end = std::min(perm.size(), begin + bs);
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::uint64_t Trainer::dropout_seed(std::int64_t step, std::size_t slot) const {
  return mix(mix(model_->config().seed + 1) ^ mix(static_cast<std::uint64_t>(step)) ^ slot);
}

StepLoss Trainer::step() {
  const auto idx = batch(step_);
  const double inv = 1.0 / static_cast<double>(idx.size());
  StepLoss rec;
  rec.step = step_;
  rec.epoch = static_cast<int>(step_ / steps_per_epoch());
  adam_->zero_grad();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& s = samples_[idx[k]];
    Tape tape;
    detect::LossTerms terms;
    try {
      terms = model_->loss(model_->forward(s, true, dropout_seed(step_, k)), s);
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " (" + e.what() + ")");
    }
    const double total = terms.total.item();
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_));
    }
    tape.backward(ops::scale(terms.total, inv));
    rec.total += total * inv;
    rec.box += terms.box.item() * inv;
    rec.objective += terms.objective.item() * inv;
  }
  adam_->step();
  ++step_;
  return rec;
}

StepLoss Trainer::peek() const {
  const auto idx = batch(step_);
  const double inv = 1.0 / static_cast<double>(idx.size());
  StepLoss rec;
  rec.step = step_;
  rec.epoch = static_cast<int>(step_ / steps_per_epoch());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& s = samples_[idx[k]];
    const auto terms = model_->loss(model_->forward(s, true, dropout_seed(step_, k)), s);
    rec.total += terms.total.item() * inv;
    rec.box += terms.box.item() * inv;
    rec.objective += terms.objective.item() * inv;
  }
  return rec;
}

std::vector<StepLoss> Trainer::run(const std::function<void(const StepLoss&)>& on_step) {
  std::vector<StepLoss> trace;
  while (!done()) {
    trace.push_back(step());
    if (on_step) on_step(trace.back());
  }
  return trace;
}

ckpt::Checkpoint Trainer::checkpoint() const {
  ckpt::Checkpoint ck;
  ck.meta["config"] = to_json(model_->config());
  ck.meta["seed"] = model_->config().seed;
  ck.meta["step"] = step_;
  ck.meta["optimizer_steps"] = adam_->steps();
  const auto params = model_->parameters();
  ck.tensors = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params[k].second.shape();
    ck.tensors.emplace_back("adam.m." + params[k].first,
                            Tensor::from(shape, adam_->first_moments()[k]));
    ck.tensors.emplace_back("adam.v." + params[k].first,
                            Tensor::from(shape, adam_->second_moments()[k]));
  }
  return ck;
}

std::unique_ptr<Model> load_model(const ckpt::Checkpoint& checkpoint) {
  if (!checkpoint.meta.contains("config")) throw DataError("checkpoint carries no config");
  const auto config = config_from_json(nlohmann::json::parse(checkpoint.meta["config"].dump()));
  auto model = std::make_unique<Model>(config);
  for (auto& [name, t] : model->parameters()) copy_into(checkpoint.get(name), t, name);
  return model;
}

Evaluation evaluate_model(const Model& model, const std::vector<const data::Sample*>& samples) {
  if (samples.empty()) throw DataError("evaluation split is empty");
  const auto& cfg = model.config();
  Evaluation ev;
  std::vector<eval::ImageResult> results;
  for (const auto* s : samples) {
    const auto prepared = model.prepare(*s);
    eval::ImageResult r;
    r.truths = prepared.original_truths;
    r.detections = model.predict(prepared, cfg.candidate_thresh);
    ev.images.push_back({s->record.image, r.detections});
    results.push_back(std::move(r));
  }
  ev.report = eval::evaluate(results, {cfg.num_class, cfg.conf_thresh});
  return ev;
}

std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  char line[160];
  for (const auto& d : dets) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f %.6f\n", d.class_id, d.confidence,
                  d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    out += line;
  }
  return out;
}

}  // namespace msf
