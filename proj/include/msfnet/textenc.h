// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_TEXTENC_H_
#define MSFNET_TEXTENC_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "msfnet/tensor.h"

namespace msf::text {

struct TokenizerOptions {
  int word_maxlen = 41;   // characters kept per word
  int sent_maxlen = 35;   // words kept per description
  int bucket_count = 4096;
};

struct TextSample {
  std::string raw_text;
  std::vector<int> tokens;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercases, splits on whitespace and ASCII punctuation, truncates each
/// word to word_maxlen code points and the sequence to sent_maxlen words, and
/// hashes every word into [0, bucket_count).
///
/// Throws DataError for invalid UTF-8 or when nothing is left after
/// normalization (a missing description).
std::vector<int> tokenize(std::string_view text, const TokenizerOptions& opts);

TextSample make_sample(std::string raw_text, const TokenizerOptions& opts);

/// Trainable [bucket_count x dim] lookup table.
class EmbeddingTable {
 public:
  EmbeddingTable(int bucket_count, int dim, std::uint64_t seed);

  int bucket_count() const { return bucket_count_; }
  int dim() const { return dim_; }
  const Tensor& weights() const { return weights_; }
  Tensor& weights() { return weights_; }

 private:
  int bucket_count_;
  int dim_;
  Tensor weights_;
};

/// [n x dim] matrix of table rows; n == tokens.size() >= 1.
Tensor embed(const std::vector<int>& tokens, const EmbeddingTable& table);

}  // namespace msf::text

#endif  // MSFNET_TEXTENC_H_
