// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_FUSION_H_
#define MSFNET_FUSION_H_

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msfnet/bridge.h"
#include "msfnet/layers.h"

// Cross-modal transformer over [text | LR visual tokens | SR visual tokens].
namespace msf::fusion {

struct EncoderConfig {
  int dim = 32;
  int heads = 4;
  int layers = 2;
  int ffn_expansion = 4;
  double dropout = 0.5;
  bool positional = false;
  int max_len = 512;
  /// Place the text tokens in front of both visual streams.
  bool duplicate_text = false;

  void validate() const;
};

using Range = std::pair<std::int64_t, std::int64_t>;  // [begin, end)

struct SequenceLayout {
  Range text{0, 0};
  Range text_again{0, 0};  // empty unless duplicate_text
  std::array<Range, 3> lr{};
  std::array<Range, 3> sr{};
  std::int64_t length = 0;
  std::int64_t text_tokens = 0;

  /// All ranges in sequence order.
  std::vector<Range> ordered() const;
};

struct FusedSequence {
  Tensor g;  // [L x T]
  SequenceLayout layout;
};

/// text: [n x T] or undefined for n = 0. Order: text, LR levels 1..3,
/// (text again,) SR levels 1..3.
FusedSequence build_sequence(const Tensor& text, const bridge::VisualTokens& lr,
                             const bridge::VisualTokens& sr, bool duplicate_text);

/// Row-stochastic softmax(Q K^T / sqrt(d_k)); d_k <= 0 means Q.dim(1).
Tensor attention_weights(const Tensor& q, const Tensor& k, double d_k = 0.0);
/// attention_weights(q, k, d_k) V.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double d_k = 0.0);

/// Post-norm encoder layer: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
/// Dropout applies inside the FFN only, and only when training.
class EncoderLayer {
 public:
  EncoderLayer(const EncoderConfig& config, nn::Initializer& init);

  Tensor forward(const Tensor& g, bool training, std::uint64_t dropout_seed) const;
  void collect(nn::NamedParams& out, const std::string& prefix) const;

  nn::Linear query, key, value, output;
  nn::Linear ffn_in, ffn_out;
  nn::LayerNorm norm1, norm2;

 private:
  int heads_;
  double dropout_;
};

/// Per-level token maps, one T x T linear map (1x1 conv) per level.
class TokenProjection {
 public:
  TokenProjection() = default;
  /// Identity weights, zero bias.
  explicit TokenProjection(int dim);

  bridge::VisualTokens forward(const bridge::VisualTokens& tokens) const;
  void collect(nn::NamedParams& out, const std::string& prefix) const;

  std::array<nn::Linear, 3> maps;
};

class FusionModel {
 public:
  FusionModel(const EncoderConfig& config, nn::Initializer& init);

  /// Maps visual tokens into encoder space (applied to both streams).
  bridge::VisualTokens project_in(const bridge::VisualTokens& tokens) const {
    return conv_a.forward(tokens);
  }
  /// Runs the encoder stack, averages LR and SR outputs per level and maps
  /// the result back with conv_b.
  bridge::VisualTokens forward(const FusedSequence& seq, bool training,
                               std::uint64_t dropout_seed) const;

  const EncoderConfig& config() const { return config_; }
  void collect(nn::NamedParams& out, const std::string& prefix) const;

  TokenProjection conv_a;
  TokenProjection conv_b;
  std::vector<EncoderLayer> layers;
  Tensor positions;  // [max_len x T] when enabled

 private:
  EncoderConfig config_;
};

}  // namespace msf::fusion

#endif  // MSFNET_FUSION_H_
