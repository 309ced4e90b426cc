// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_DATASET_H_
#define MSFNET_DATASET_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msfnet/acie.h"
#include "msfnet/tensor.h"

namespace msf::data {

enum class Split { kNone, kTrain, kVal, kTest };

std::string split_name(Split split);
/// Accepts train, val, test; anything else is a DataError.
Split parse_split(const std::string& name);

/// One manifest row. Paths are kept as written; relative paths resolve
/// against the manifest's directory.
struct SampleRecord {
  std::string image;
  std::string annotations;
  std::optional<std::string> text;
  std::optional<std::string> sr_image;
  int width = 0;
  int height = 0;
  Split split = Split::kNone;
};

struct Sample {
  SampleRecord record;
  Tensor image;     // [3 x H x W] in [0, 1]
  Tensor sr_image;  // [3 x fH x fW] when the manifest names one
  std::vector<acie::BoxAnnotation> boxes;
  std::optional<std::string> text;  // description contents
};

struct Dataset {
  std::filesystem::path root;
  std::vector<Sample> samples;

  /// Samples carrying `split`; Split::kNone selects every sample.
  std::vector<const Sample*> select(Split split) const;
};

/// Reads a JSONL manifest. Errors name the manifest line or the annotation
/// file and line.
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);
/// Writes rows as image, annotations, text, width, height, then sr_image and
/// split when set.
std::string format_manifest(const std::vector<SampleRecord>& records);

/// Reads the manifest and decodes every image, annotation and description.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Largest-remainder counts for `n` items; ties favour earlier ratios.
std::array<int, 3> split_counts(int n, const std::array<double, 3>& ratios);

/// Shuffles with `seed` and tags the first counts[0] records train, the next
/// counts[1] val and the rest test. Throws DataError when `records` is empty.
std::vector<SampleRecord> split(std::vector<SampleRecord> records,
                                const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace msf::data

#endif  // MSFNET_DATASET_H_
