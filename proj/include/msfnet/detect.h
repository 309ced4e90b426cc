// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_DETECT_H_
#define MSFNET_DETECT_H_

#include <array>
#include <span>
#include <string>
#include <vector>

#include "msfnet/backbone.h"
#include "msfnet/boxes.h"
#include "msfnet/layers.h"

// Detection neck, heads, box coding, suppression and the training loss.
// Coordinates are model-input pixels throughout.
namespace msf::detect {

/// Nine prior boxes (w, h) in pixels, ascending by area. Anchors 0-2 belong
/// to the finest level (stride 8), 6-8 to the coarsest (stride 32).
struct AnchorSet {
  std::array<std::array<double, 2>, 9> wh{};

  /// Sizes {0.1, 0.25, 0.4} x image dims, each spread by {0.8, 1, 1.2}.
  static AnchorSet defaults(int width, int height);
  void validate() const;
  /// Pyramid level (0 = coarsest) served by anchor j.
  static int level_of(int j) { return 2 - j / 3; }
};

struct DetectConfig {
  int num_class = 3;
  std::array<int, 3> spp_kernels = {5, 9, 13};
  bool objectness = true;
  double negative_weight = 0.5;
  /// Initial objectness probability encoded in the head biases.
  double objectness_prior = 0.01;
  /// Stddev of the head weights; 0 uses He initialisation.
  double head_init_std = 0.01;
};

inline constexpr std::array<int, 3> kToySppKernels = {3, 5, 7};

/// Identity plus stride-1 same-padded max pools, concatenated on channels.
/// Each kernel must be odd with (k - 1) / 2 <= min(H, W).
Tensor spp(const Tensor& f, std::span<const int> kernels);

/// Centre offsets within a cell are kGridScale * sigmoid(t) - (kGridScale - 1) / 2,
/// which reaches both cell edges at finite t.
inline constexpr double kGridScale = 1.05;

/// Channels per anchor slot: 4 box terms, objectness, class logits.
inline int slot_depth(int num_class) { return 5 + num_class; }

/// Raw head outputs per level, each [3 (5 + num_class) x S x S].
using RawPredictions = std::array<Tensor, 3>;

class Detector {
 public:
  /// channels: pyramid channels (C1, C2, C3).
  Detector(std::array<int, 3> channels, const DetectConfig& config,
           nn::Initializer& init);

  /// SPP on the coarsest level, then one top-down and one bottom-up pass.
  /// Output dims equal input dims.
  ScalePyramid neck(const ScalePyramid& p) const;
  RawPredictions head(const ScalePyramid& p) const;
  RawPredictions forward(const ScalePyramid& p) const { return head(neck(p)); }

  const DetectConfig& config() const { return config_; }
  void collect(nn::NamedParams& out, const std::string& prefix) const;

  nn::Conv2d spp_reduce;
  nn::Conv2d top_down2, top_down3;
  nn::Conv2d down3, bottom_up2, down2, bottom_up1;
  std::array<nn::Conv2d, 3> heads;

 private:
  DetectConfig config_;
};

struct LevelGrid {
  int cols = 0;
  int rows = 0;
};
using GridSizes = std::array<LevelGrid, 3>;

/// Grid sizes read off raw predictions.
GridSizes grid_sizes(const RawPredictions& raw);

struct Slot {
  int level = 0;   // 0 = coarsest
  int anchor = 0;  // 0..2 within the level
  int cx = 0;
  int cy = 0;
};

struct Assignment {
  Slot slot;
  int anchor_index = 0;  // 0..8 in the AnchorSet
  int truth = 0;         // index into the ground-truth list
};

/// Every box goes to the anchor with the best shape IoU (ties to the lower
/// index) and the cell containing its centre on that anchor's level. When
/// two boxes claim one slot the first keeps it.
std::vector<Assignment> assign(std::span<const GroundTruth> truths,
                               const AnchorSet& anchors,
                               const GridSizes& grids,
                               int image_width, int image_height);

struct Encoding {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

/// Raw regression values that decode back to `box` at `slot`.
Encoding encode(const Box& box, const Slot& slot, const AnchorSet& anchors,
                int image_width, int image_height, const GridSizes& grids);
Box decode_box(const Encoding& e, const Slot& slot, const AnchorSet& anchors,
               int image_width, int image_height, const GridSizes& grids);

/// Boxes with confidence >= conf_thresh, clamped to the image. Confidence is
/// sigmoid(objectness) times the best softmax class probability (the class
/// probability alone when objectness is disabled).
std::vector<Detection> decode(const RawPredictions& raw, const AnchorSet& anchors,
                              int num_class, double conf_thresh, int image_width,
                              int image_height, bool objectness = true);

/// Greedy per-class suppression of IoU > nms_thresh. Candidates are visited
/// by confidence desc, area desc, x1 asc; survivors keep that order.
std::vector<Detection> nms(std::vector<Detection> dets, double nms_thresh);

struct LossTerms {
  Tensor total;  // box + objective
  Tensor box;
  Tensor objective;
};

/// Box term: squared error of (centre offsets, tw, th) against the
/// encoded targets, averaged over the 4 terms of every positive. Objective:
/// per-positive class BCE on softmax probabilities plus objectness BCE
/// (positives, plus negative_weight times the sum over unassigned slots).
/// Every term is divided by the number of positives (at least 1).
LossTerms loss(const RawPredictions& raw, std::span<const GroundTruth> truths,
               std::span<const Assignment> assignment, const AnchorSet& anchors,
               const DetectConfig& config, int image_width, int image_height);

}  // namespace msf::detect

#endif  // MSFNET_DETECT_H_
