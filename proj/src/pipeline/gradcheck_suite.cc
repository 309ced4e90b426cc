// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/gradcheck_suite.h"

#include <algorithm>
#include <functional>
#include <random>

#include "msfnet/gradcheck.h"
#include "msfnet/model.h"
#include "msfnet/ops.h"
#include "msfnet/tape.h"

namespace msf {

namespace {

Tensor random(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Identity in the forward pass with a deliberately wrong backward rule.
Tensor miswired(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), {x.data().begin(), x.data().end()});
  TensorImpl* px = x.impl();
  TensorImpl* po = out.impl();
  record_op(out, {x}, [=] {
    auto g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.5 * po->grad[i];
  });
  return out;
}

Tensor flatten(const std::array<Tensor, 3>& parts) {
  return ops::concat({ops::reshape(parts[0], {parts[0].numel()}),
                      ops::reshape(parts[1], {parts[1].numel()}),
                      ops::reshape(parts[2], {parts[2].numel()})},
                     0);
}

std::vector<Tensor> tensors(const nn::NamedParams& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.second);
  return out;
}

class Suite {
 public:
  Suite(const SuiteOptions& options, std::uint64_t seed) : options_(options), rng_(seed) {
    report_.threshold = options.threshold;
  }

  // `fn` produces any tensor; it is contracted with fixed random weights.
  void check(const std::string& name, const std::string& kind,
             const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs,
             std::int64_t coords = 0) {
    const bool corrupt = options_.corrupt == name;
    auto wrapped = [&] {
      Tensor t = fn();
      return corrupt ? miswired(t) : t;
    };
    const Tensor weights = random(fn().shape(), rng_);
    auto loss = [&] {
      Tensor t = wrapped();
      return t.rank() == 0 ? t : ops::sum(ops::mul(t, weights));
    };
    GradCheckOptions o;
    o.max_coords_per_input = coords;
    o.seed = rng_();
    const auto r = grad_check(loss, inputs, o);
    report_.components.push_back(
        {name, kind, r.max_rel_error, r.max_abs_error, r.coords_checked, r.coords_skipped,
         r.coords_checked > 0 && r.max_rel_error < options_.threshold});
  }

  std::mt19937_64& rng() { return rng_; }
  GradCheckReport take() { return std::move(report_); }
  std::int64_t coords() const { return options_.coords_per_tensor; }

 private:
  SuiteOptions options_;
  std::mt19937_64 rng_;
  GradCheckReport report_;
};

void op_checks(Suite& s) {
  auto& rng = s.rng();
  Tensor x = random({3, 6, 5}, rng), k = random({4, 3, 3, 3}, rng), b = random({4}, rng);
  Tensor kt = random({3, 2, 3, 3}, rng), bt = random({2}, rng);
  Tensor m = random({5, 6}, rng), m2 = random({6, 3}, rng), v = random({6}, rng);
  Tensor g = random({6}, rng), be = random({6}, rng), table = random({4, 6}, rng);
  static const std::vector<int> ids = {1, 0, 3, 1};
  const std::vector<Tensor> all = {x, k, b, kt, bt, m, m2, v, g, be, table};
  const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
      {"add", [=] { return ops::add(m, v); }},
      {"sub", [=] { return ops::sub(v, m); }},
      {"mul", [=] { return ops::mul(m, v); }},
      {"relu", [=] { return ops::relu(m); }},
      {"sigmoid", [=] { return ops::sigmoid(m); }},
      {"scale", [=] { return ops::scale(m, -1.7); }},
      {"matmul", [=] { return ops::matmul(m, m2); }},
      {"softmax", [=] { return ops::softmax(m, 1); }},
      {"conv2d", [=] { return ops::conv2d(x, k, b, 2, 1); }},
      {"conv_transpose2d", [=] { return ops::conv_transpose2d(x, kt, bt, 2, 1, 1); }},
      {"maxpool2d", [=] { return ops::maxpool2d(x, 3, 1, 1); }},
      {"adaptive_maxpool2d",
       [=] { return ops::adaptive_maxpool2d(x, 4, 4, ops::AdaptiveWindows::kStrict); }},
      {"upsample_nearest", [=] { return ops::upsample_nearest(x, 2); }},
      {"layernorm", [=] { return ops::layernorm(m, g, be, 1e-5); }},
      {"concat", [=] { return ops::concat({m, ops::scale(m, 2.0)}, 0); }},
      {"slice", [=] { return ops::slice(x, 1, 1, 5); }},
      {"reshape", [=] { return ops::reshape(m, {6, 5}); }},
      {"transpose", [=] { return ops::transpose(m); }},
      {"sum", [=] { return ops::sum(ops::mul(m, m)); }},
      {"mean", [=] { return ops::mean(ops::mul(m, m)); }},
      {"gather_rows", [=] { return ops::gather_rows(table, ids); }},
      {"dropout", [=] { return ops::dropout(m, 0.5, 42); }},
  };
  for (const auto& [name, fn] : cases) s.check(name, "op", fn, all);
}

// A single input sample at model-input size with two boxes and a caption.
PreparedSample synthetic_sample(const Model& model, std::mt19937_64& rng) {
  const auto& c = model.config();
  PreparedSample p;
  const Shape shape = {3, c.input_height(), c.input_width()};
  p.lr_input = random(shape, rng, 0.0, 1.0);
  p.sr_input = random(shape, rng, 0.0, 1.0);
  p.tokens = text::tokenize("a small green beetle with long antennae", model.tokenizer());
  const double w = c.input_width(), h = c.input_height();
  p.truths = {{{0.1 * w, 0.2 * h, 0.45 * w, 0.5 * h}, 0},
              {{0.5 * w, 0.55 * h, 0.9 * w, 0.95 * h}, c.num_class - 1}};
  return p;
}

void module_checks(Suite& s, const Model& model, const PreparedSample& sample) {
  auto& rng = s.rng();
  const auto n = s.coords();
  const auto& cfg = model.config();
  nn::NamedParams p;

  {
    text::EmbeddingTable table(16, cfg.token_dim, 7);
    const std::vector<int> tok = {3, 9, 3, 15};
    s.check("textenc.embed", "module", [=] { return text::embed(tok, table); },
            {table.weights()});
  }

  Tensor image = sample.lr_input.clone();
  p.clear();
  model.backbone.collect(p, "backbone");
  auto in = tensors(p);
  in.push_back(image);
  s.check("backbone", "module",
          [&] { return flatten(model.backbone.forward(image).levels); },
          in, n);

  ScalePyramid pyr;
  for (int i = 0; i < 3; ++i) pyr[i] = random(model.backbone.forward(image)[i].shape(), rng, 0.0, 1.0);
  p.clear();
  model.converter.collect(p, "bridge");
  in = tensors(p);
  for (int i = 0; i < 3; ++i) in.push_back(pyr[i]);
  s.check("bridge.tic", "module",
          [&] {
            const auto t = model.converter.tic_forward(pyr);
            return ops::concat({t[0], t[1], t[2]}, 0);
          },
          in, n);

  bridge::VisualTokens tokens;
  for (int i = 0; i < 3; ++i) tokens[i] = random({25, cfg.token_dim}, rng);
  in = tensors(p);
  for (int i = 0; i < 3; ++i) in.push_back(tokens[i]);
  s.check("bridge.itc", "module",
          [&] { return flatten(model.converter.itc_forward(tokens).levels); },
          in, n);

  Tensor q = random({5, 8}, rng), kk = random({7, 8}, rng), vv = random({7, 3}, rng);
  s.check("fusion.attention", "module", [=] { return fusion::attention(q, kk, vv); }, {q, kk, vv});

  p.clear();
  model.fusion.collect(p, "fusion");
  Tensor text_tokens = random({6, cfg.token_dim}, rng);
  in = tensors(p);
  in.push_back(text_tokens);
  for (int i = 0; i < 3; ++i) in.push_back(tokens[i]);
  s.check("fusion", "module",
          [&] {
            const auto seq = fusion::build_sequence(text_tokens, model.fusion.project_in(tokens),
                                                    model.fusion.project_in(tokens),
                                                    cfg.duplicate_text);
            const auto out = model.fusion.forward(seq, true, 5);
            return ops::concat({out[0], out[1], out[2]}, 0);
          },
          in, n);

  const std::vector<int> kernels(cfg.spp_kernels.begin(), cfg.spp_kernels.end());
  const std::int64_t side = std::max(4, (kernels[2] - 1) / 2);
  Tensor f = random({3, side, side}, rng);
  s.check("detect.spp", "module", [=] { return detect::spp(f, kernels); }, {f});

  p.clear();
  model.detector.collect(p, "detect");
  in = tensors(p);
  for (int i = 0; i < 3; ++i) in.push_back(pyr[i]);
  s.check("detect.neck_head", "module",
          [&] { return flatten(model.detector.forward(pyr)); },
          in, n);

  Model::Output out;
  for (int i = 0; i < 3; ++i) out.raw[i] = random(model.detector.forward(pyr)[i].shape(), rng);
  in.assign(out.raw.begin(), out.raw.end());
  s.check("detect.loss", "module",
          [&] { return model.loss(out, sample).total; },
          in);
}

}  // namespace

bool GradCheckReport::passed() const {
  for (const auto& c : components)
    if (!c.passed) return false;
  return !components.empty();
}

const std::vector<std::string>& registered_ops() {
  static const std::vector<std::string> names = {
      "add",       "sub",        "mul",       "relu",        "sigmoid", "scale",
      "matmul",    "softmax",    "conv2d",    "conv_transpose2d", "maxpool2d",
      "adaptive_maxpool2d", "upsample_nearest", "layernorm", "concat", "slice",
      "reshape",   "transpose",  "sum",       "mean",        "gather_rows", "dropout"};
  return names;
}

GradCheckReport run_gradcheck_suite(const RunConfig& config, const SuiteOptions& options) {
  Suite s(options, config.seed + 101);
  op_checks(s);
  const Model model(config);
  const auto sample = synthetic_sample(model, s.rng());
  module_checks(s, model, sample);
  s.check("model.end_to_end", "model",
          [&] { return model.loss(model.forward(sample, true, 9), sample).total; },
          tensors(model.parameters()), options.coords_per_tensor);
  return s.take();
}

nlohmann::ordered_json to_json(const GradCheckReport& report) {
  nlohmann::ordered_json j;
  j["threshold"] = report.threshold;
  j["passed"] = report.passed();
  auto& list = j["components"] = nlohmann::ordered_json::array();
  for (const auto& c : report.components) {
    nlohmann::ordered_json row;
    row["name"] = c.name;
    row["kind"] = c.kind;
    row["max_rel_error"] = c.max_rel_error;
    row["max_abs_error"] = c.max_abs_error;
    row["coords"] = c.coords;
    row["skipped"] = c.skipped;
    row["passed"] = c.passed;
    list.push_back(row);
  }
  return j;
}

}  // namespace msf
