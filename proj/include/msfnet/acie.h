// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_ACIE_H_
#define MSFNET_ACIE_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "msfnet/error.h"
#include "msfnet/image.h"

// Synthetic detection data: R non-overlapping target crops alpha-composited
// onto a background, with annotations generated alongside.
namespace msf::acie {

/// Integer pixel box, half-open: covers x in [x1, x2), y in [y1, y2).
struct BoxAnnotation {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 0;

  bool operator==(const BoxAnnotation&) const = default;
};

/// True iff the intersection has positive area; shared edges do not count.
bool rect_overlap(const BoxAnnotation& a, const BoxAnnotation& b);

struct TargetCrop {
  image::Raster image;  // RGBA
  int class_id = 0;
  /// Bounding rectangle of pixels with alpha > 0.
  int tight_x = 0, tight_y = 0, tight_w = 0, tight_h = 0;
};

/// Computes the tight rectangle; RGB rasters count as fully opaque.
/// Throws DataError for a crop without opaque pixels.
TargetCrop make_crop(image::Raster raster, int class_id);

class PlacementError : public DataError {
 public:
  using DataError::DataError;
};

/// Samples the top-left corner uniformly until the box overlaps none of
/// `existing`. Throws PlacementError after max_retries rejected samples.
BoxAnnotation place_target(int bg_width, int bg_height, int tight_w, int tight_h,
                           int class_id, const std::vector<BoxAnnotation>& existing,
                           std::mt19937_64& rng, int max_retries);

struct AcieConfig {
  int background_pool = 0;  // B; 0 uses every loaded background
  int target_pool = 0;      // T; 0 uses every loaded target
  int per_image = 4;        // R
  int count = 1;            // num
  std::uint64_t seed = 0;
  int max_retries = 100;
  int max_rerolls = 10;
  bool scale_jitter = false;
  int threads = 0;  // 0 = hardware concurrency

  /// Throws DataError naming the offending field.
  void validate() const;
};

struct Pools {
  std::vector<image::Raster> backgrounds;
  std::vector<TargetCrop> targets;
  std::map<int, std::string> descriptions;  // per class, optional
};

/// backgrounds_dir/*.png; targets_dir/<class_id>/*.png with an optional
/// targets_dir/<class_id>/description.txt. Files are read in sorted order.
Pools load_pools(const std::filesystem::path& backgrounds_dir,
                 const std::filesystem::path& targets_dir);

/// Throws DataError when the pools are smaller than the configured B or T.
void check_pools(const AcieConfig& config, const Pools& pools);

struct Composite {
  image::Raster image;  // RGB, background dims
  std::vector<BoxAnnotation> boxes;
  std::optional<std::string> caption;
};

/// Seed of image `index` derived from the global seed.
std::uint64_t image_seed(std::uint64_t seed, std::uint64_t index);

/// Builds image `index`; depends only on (config, pools, index).
Composite compose(const AcieConfig& config, const Pools& pools, std::uint64_t index);

/// `class_id x1 y1 x2 y2` per line.
std::string format_annotations(const std::vector<BoxAnnotation>& boxes);
/// Parses annotation text; errors name `source` and the 1-based line.
std::vector<BoxAnnotation> parse_annotations(const std::string& text,
                                             const std::string& source);

struct GenerateSummary {
  int images = 0;
  int boxes = 0;
  std::filesystem::path manifest;
};

/// Writes acie_NNNNNN.{png,txt[,caption.txt]} and manifest.jsonl (paths
/// relative to out_dir). Output bytes do not depend on the thread count.
GenerateSummary generate(const AcieConfig& config, const Pools& pools,
                         const std::filesystem::path& out_dir);

/// Procedural backgrounds and per-class shape targets for desk-scale runs:
/// writes backgrounds/ and targets/<class>/ under `dir`.
void write_toy_assets(const std::filesystem::path& dir, int num_class, int backgrounds,
                      int targets_per_class, int background_size, std::uint64_t seed);

}  // namespace msf::acie

#endif  // MSFNET_ACIE_H_
