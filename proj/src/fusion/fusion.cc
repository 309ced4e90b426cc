// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/fusion.h"

#include <cmath>

#include "msfnet/error.h"
#include "msfnet/ops.h"

namespace msf::fusion {

void EncoderConfig::validate() const {
  if (dim <= 0 || heads <= 0 || layers < 0 || ffn_expansion <= 0) {
    throw ShapeError("encoder: dim, heads and ffn_expansion must be positive");
  }
  if (dim % heads != 0) {
    throw ShapeError("encoder: dim " + std::to_string(dim) +
                     " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ShapeError("encoder: dropout must be in [0, 1)");
  if (positional && max_len <= 0) throw ShapeError("encoder: max_len must be positive");
}

std::vector<Range> SequenceLayout::ordered() const {
  std::vector<Range> out;
  out.push_back(text);
  for (const auto& r : lr) out.push_back(r);
  out.push_back(text_again);
  for (const auto& r : sr) out.push_back(r);
  return out;
}

FusedSequence build_sequence(const Tensor& text, const bridge::VisualTokens& lr,
                             const bridge::VisualTokens& sr, bool duplicate_text) {
  std::int64_t dim = -1;
  auto check = [&](const Tensor& t, const char* what) {
    if (!t.defined() || t.rank() != 2) {
      throw ShapeError(std::string("build_sequence: ") + what + " must be a matrix");
    }
    if (dim < 0) dim = t.dim(1);
    if (t.dim(1) != dim) {
      throw ShapeError(std::string("build_sequence: ") + what + " has width " +
                       std::to_string(t.dim(1)) + ", expected " + std::to_string(dim));
    }
  };
  for (const auto& t : lr) check(t, "LR tokens");
  for (const auto& t : sr) check(t, "SR tokens");
  const bool has_text = text.defined() && text.numel() > 0;
  if (has_text) check(text, "text");

  FusedSequence seq;
  auto& lay = seq.layout;
  std::vector<Tensor> parts;
  std::int64_t pos = 0;
  auto push = [&](const Tensor& t) {
    parts.push_back(t);
    Range r{pos, pos + t.dim(0)};
    pos = r.second;
    return r;
  };
  if (has_text) lay.text = push(text);
  lay.text_tokens = has_text ? text.dim(0) : 0;
  for (int i = 0; i < 3; ++i) lay.lr[i] = push(lr[i]);
  lay.text_again = {pos, pos};
  if (duplicate_text && has_text) lay.text_again = push(text);
  for (int i = 0; i < 3; ++i) lay.sr[i] = push(sr[i]);
  lay.length = pos;
  seq.g = ops::concat(parts, 0);
  return seq;
}

Tensor attention_weights(const Tensor& q, const Tensor& k, double d_k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: Q " + shape_string(q.shape()) + " and K " +
                     shape_string(k.shape()) + " do not match");
  }
  if (d_k <= 0.0) d_k = static_cast<double>(q.dim(1));
  const double inv = 1.0 / std::sqrt(d_k);
  return ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv), 1);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double d_k) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw ShapeError("attention: V " + shape_string(v.shape()) + " does not match K " +
                     shape_string(k.shape()));
  }
  return ops::matmul(attention_weights(q, k, d_k), v);
}

EncoderLayer::EncoderLayer(const EncoderConfig& config, nn::Initializer& init)
    : query(config.dim, config.dim, init),
      key(config.dim, config.dim, init),
      value(config.dim, config.dim, init),
      output(config.dim, config.dim, init),
      ffn_in(config.dim, config.dim * config.ffn_expansion, init),
      ffn_out(config.dim * config.ffn_expansion, config.dim, init),
      norm1(config.dim),
      norm2(config.dim),
      heads_(config.heads),
      dropout_(config.dropout) {
  config.validate();
}

Tensor EncoderLayer::forward(const Tensor& g, bool training,
                             std::uint64_t dropout_seed) const {
  const auto dim = g.dim(1);
  const auto dk = dim / heads_;
  auto q = query.forward(g), k = key.forward(g), v = value.forward(g);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const auto b = h * dk, e = (h + 1) * dk;
    heads.push_back(attention(ops::slice(q, 1, b, e), ops::slice(k, 1, b, e),
                              ops::slice(v, 1, b, e)));
  }
  auto attended = output.forward(heads_ == 1 ? heads[0] : ops::concat(heads, 1));
  auto x = norm1.forward(ops::add(g, attended));
  auto hidden = ops::relu(ffn_in.forward(x));
  if (training && dropout_ > 0.0) hidden = ops::dropout(hidden, dropout_, dropout_seed);
  return norm2.forward(ops::add(x, ffn_out.forward(hidden)));
}

void EncoderLayer::collect(nn::NamedParams& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
  ffn_in.collect(out, prefix + ".ffn_in");
  ffn_out.collect(out, prefix + ".ffn_out");
  norm1.collect(out, prefix + ".norm1");
  norm2.collect(out, prefix + ".norm2");
}

TokenProjection::TokenProjection(int dim) {
  for (auto& m : maps) {
    std::vector<double> eye(static_cast<std::size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) eye[static_cast<std::size_t>(i) * dim + i] = 1.0;
    m.weight = Tensor::from({dim, dim}, std::move(eye), true);
    m.bias = Tensor::zeros({dim}, true);
  }
}

bridge::VisualTokens TokenProjection::forward(const bridge::VisualTokens& tokens) const {
  bridge::VisualTokens out;
  for (int i = 0; i < 3; ++i) out[i] = maps[i].forward(tokens[i]);
  return out;
}

void TokenProjection::collect(nn::NamedParams& out, const std::string& prefix) const {
  for (int i = 0; i < 3; ++i) maps[i].collect(out, prefix + "." + std::to_string(i + 1));
}

FusionModel::FusionModel(const EncoderConfig& config, nn::Initializer& init)
    : conv_a(config.dim), conv_b(config.dim), config_(config) {
  config.validate();
  for (int i = 0; i < config.layers; ++i) layers.emplace_back(config, init);
  if (config.positional) {
    positions = init.normal({config.max_len, config.dim}, 0.02);
  }
}

bridge::VisualTokens FusionModel::forward(const FusedSequence& seq, bool training,
                                          std::uint64_t dropout_seed) const {
  Tensor g = seq.g;
  if (g.rank() != 2 || g.dim(1) != config_.dim) {
    throw ShapeError("fusion: sequence " + shape_string(g.shape()) +
                     " does not match model dim " + std::to_string(config_.dim));
  }
  if (config_.positional) {
    if (g.dim(0) > config_.max_len) {
      throw ShapeError("fusion: sequence length " + std::to_string(g.dim(0)) +
                       " exceeds max_len " + std::to_string(config_.max_len));
    }
    g = ops::add(g, ops::slice(positions, 0, 0, g.dim(0)));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g = layers[i].forward(g, training, dropout_seed * 0x9e3779b97f4a7c15ULL + i + 1);
  }
  bridge::VisualTokens merged;
  for (int i = 0; i < 3; ++i) {
    const auto& lr = seq.layout.lr[i];
    const auto& sr = seq.layout.sr[i];
    merged[i] = ops::scale(ops::add(ops::slice(g, 0, lr.first, lr.second),
                                    ops::slice(g, 0, sr.first, sr.second)),
                           0.5);
  }
  return conv_b.forward(merged);
}

void FusionModel::collect(nn::NamedParams& out, const std::string& prefix) const {
  conv_a.collect(out, prefix + ".conv_a");
  conv_b.collect(out, prefix + ".conv_b");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(out, prefix + ".layer" + std::to_string(i));
  }
  if (positions.defined()) out.emplace_back(prefix + ".positions", positions);
}

}  // namespace msf::fusion
