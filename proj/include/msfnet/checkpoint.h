// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_CHECKPOINT_H_
#define MSFNET_CHECKPOINT_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msfnet/tensor.h"

// Single-file checkpoint layout, all integers little-endian:
//
//   "MSFNETCK"            8-byte magic
//   u32 version           currently 1
//   u64 n, n bytes        UTF-8 JSON metadata (run config, step, seed, ...)
//   u64 count             number of tensors, then per tensor:
//     u32 n, n bytes      name
//     u32 rank, i64[rank] extents
//     f64[numel]          row-major payload
namespace msf::ckpt {

inline constexpr char kMagic[8] = {'M', 'S', 'F', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  /// Throws DataError when `name` is absent.
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save(const Checkpoint& checkpoint, const std::string& path);
/// Throws DataError on a bad magic, unknown version or truncated file.
Checkpoint load(const std::string& path);

}  // namespace msf::ckpt

#endif  // MSFNET_CHECKPOINT_H_
