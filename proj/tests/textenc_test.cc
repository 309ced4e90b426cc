// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <string>

#include "msfnet/error.h"
#include "msfnet/gradcheck.h"
#include "msfnet/ops.h"
#include "msfnet/tape.h"
#include "msfnet/textenc.h"

using namespace msf;
using text::TokenizerOptions;

TEST_CASE("tokenize splits on whitespace and punctuation") {
  TokenizerOptions opts;
  CHECK(text::tokenize("Brown wings.", opts).size() == 2);
  CHECK(text::tokenize("a,b;c", opts).size() == 3);
  CHECK(text::tokenize("  leaf\tminer\n", opts).size() == 2);
}

TEST_CASE("tokenize lowercases before hashing") {
  TokenizerOptions opts;
  CHECK(text::tokenize("Brown WINGS", opts) == text::tokenize("brown wings", opts));
}

TEST_CASE("long descriptions are capped at sent_maxlen tokens") {
  TokenizerOptions opts;
  std::string s;
  for (int i = 0; i < 50; ++i) s += "word" + std::to_string(i) + " ";
  CHECK(text::tokenize(s, opts).size() == 35);
  opts.sent_maxlen = 7;
  CHECK(text::tokenize(s, opts).size() == 7);
}

TEST_CASE("words are truncated to word_maxlen code points") {
  TokenizerOptions opts;
  opts.word_maxlen = 4;
  CHECK(text::tokenize("abcdXYZ", opts) == text::tokenize("abcd", opts));
  CHECK(text::tokenize("abcdXYZ", opts) != text::tokenize("abc", opts));
  // Multi-byte characters count once.
  CHECK(text::tokenize("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9zz", opts) ==
        text::tokenize("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9", opts));
}

TEST_CASE("tokenize is deterministic and ids stay in range") {
  TokenizerOptions opts;
  opts.bucket_count = 17;
  const std::string s = "Adults feed on rice leaves and lay eggs in clusters.";
  auto a = text::tokenize(s, opts);
  auto b = text::tokenize(s, opts);
  CHECK(a == b);
  for (int id : a) {
    CHECK(id >= 0);
    CHECK(id < 17);
  }
  // Order preserving: the id of a word does not depend on its position.
  auto one = text::tokenize("rice", opts);
  CHECK(a[3] == one[0]);
}

TEST_CASE("token ids are FNV-1a modulo the bucket count") {
  TokenizerOptions opts;
  CHECK(text::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(text::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(text::tokenize("a", opts)[0] ==
        static_cast<int>(0xaf63dc4c8601ec8cULL % 4096));
}

TEST_CASE("empty or invalid descriptions are data errors") {
  TokenizerOptions opts;
  CHECK_THROWS_AS(text::tokenize("", opts), DataError);
  CHECK_THROWS_AS(text::tokenize(" .,;! ", opts), DataError);
  CHECK_THROWS_AS(text::tokenize("bad \xff byte", opts), DataError);
  CHECK_THROWS_AS(text::tokenize("cut \xc3", opts), DataError);
}

TEST_CASE("embed selects table rows") {
  text::EmbeddingTable table(16, 4, 3);
  auto one = text::embed({5}, table);
  REQUIRE(one.shape() == Shape{1, 4});
  for (int j = 0; j < 4; ++j) CHECK(one.at({0, j}) == table.weights().at({5, j}));
  auto dup = text::embed({2, 9, 2}, table);
  for (int j = 0; j < 4; ++j) CHECK(dup.at({0, j}) == dup.at({2, j}));
  CHECK_THROWS_AS(text::embed({16}, table), ShapeError);
  CHECK_THROWS_AS(text::embed({-1}, table), ShapeError);
}

TEST_CASE("embedding gradient counts selections per row") {
  text::EmbeddingTable table(8, 3, 11);
  Tape tape;
  auto loss = ops::sum(text::embed({1, 4, 1, 1}, table));
  tape.backward(loss);
  auto g = table.weights().grad();
  for (int r = 0; r < 8; ++r) {
    const double expected = r == 1 ? 3.0 : r == 4 ? 1.0 : 0.0;
    for (int j = 0; j < 3; ++j) CHECK(g[r * 3 + j] == expected);
  }
}

TEST_CASE("embedding gradient matches finite differences") {
  text::EmbeddingTable table(6, 3, 5);
  auto w = Tensor::from({3, 3}, {0.3, -1.0, 2.0, 0.5, 0.25, -0.75, 1.5, 0.1, -0.2});
  auto r = grad_check(
      [&] {
        const std::vector<int> ids{2, 0, 2};
        auto rows = ops::gather_rows(table.weights(), ids);
        return ops::sum(ops::mul(ops::mul(rows, rows), w));
      },
      {table.weights()});
  CHECK(r.max_rel_error < 1e-6);
}
