// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/textenc.h"

#include <cctype>
#include <random>

#include "msfnet/error.h"
#include "msfnet/ops.h"

namespace msf::text {

namespace {

// Length in bytes of the UTF-8 sequence starting at s[i], or 0 if invalid.
std::size_t utf8_length(std::string_view s, std::size_t i) {
  const auto lead = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  std::uint32_t cp = 0;
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto c = static_cast<unsigned char>(s[i + k]);
    if ((c & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (c & 0x3F);
  }
  static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    return 0;
  }
  return len;
}

bool is_separator(unsigned char c) {
  return c < 0x80 && (std::isspace(c) || std::ispunct(c));
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<int> tokenize(std::string_view text, const TokenizerOptions& opts) {
  if (opts.word_maxlen <= 0 || opts.sent_maxlen <= 0 || opts.bucket_count <= 0) {
    throw DataError("tokenizer limits must be positive");
  }
  std::vector<int> ids;
  std::string word;
  int chars = 0;
  auto flush = [&] {
    if (!word.empty() && static_cast<int>(ids.size()) < opts.sent_maxlen) {
      ids.push_back(static_cast<int>(fnv1a64(word) %
                                     static_cast<std::uint64_t>(opts.bucket_count)));
    }
    word.clear();
    chars = 0;
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t len = utf8_length(text, i);
    if (len == 0) {
      throw DataError("description is not valid UTF-8 (byte " +
                      std::to_string(i) + ")");
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (len == 1 && is_separator(c)) {
      flush();
    } else {
      if (chars < opts.word_maxlen) {
        if (len == 1) {
          word.push_back(static_cast<char>(std::tolower(c)));
        } else {
          word.append(text.substr(i, len));
        }
      }
      ++chars;
    }
    i += len;
  }
  flush();
  if (ids.empty()) throw DataError("missing description: no words in text");
  return ids;
}

TextSample make_sample(std::string raw_text, const TokenizerOptions& opts) {
  TextSample s;
  s.tokens = tokenize(raw_text, opts);
  s.raw_text = std::move(raw_text);
  return s;
}

EmbeddingTable::EmbeddingTable(int bucket_count, int dim, std::uint64_t seed)
    : bucket_count_(bucket_count), dim_(dim) {
  if (bucket_count <= 0 || dim <= 0) {
    throw ShapeError("embedding table dims must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.1);
  std::vector<double> w(static_cast<std::size_t>(bucket_count) * dim);
  for (auto& v : w) v = dist(rng);
  weights_ = Tensor::from({bucket_count, dim}, std::move(w), true);
}

Tensor embed(const std::vector<int>& tokens, const EmbeddingTable& table) {
  return ops::gather_rows(table.weights(), tokens);
}

}  // namespace msf::text
