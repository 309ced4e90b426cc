// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_EVALKIT_H_
#define MSFNET_EVALKIT_H_

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msfnet/boxes.h"

// Detection metrics: greedy matching, all-point interpolated AP and the
// mAP family over IoU thresholds 0.50:0.05:0.95.
namespace msf::eval {

using msf::iou;

struct MatchResult {
  std::vector<bool> true_positive;  // per detection
  std::vector<int> matched_truth;   // per detection, -1 when unmatched
};

/// `dets` must be sorted by confidence, highest first. Each detection takes
/// the unmatched same-class truth with the highest IoU >= iou_thresh (ties
/// to the lower index).
MatchResult match_greedy(std::span<const Detection> dets, std::span<const GroundTruth> truths,
                         double iou_thresh);

/// Area under the monotone precision envelope for `ranked` (confidence,
/// true positive) pairs; num_truths > 0.
double average_precision(std::vector<std::pair<double, bool>> ranked, int num_truths);

struct ImageResult {
  std::vector<Detection> detections;
  std::vector<GroundTruth> truths;
};

struct EvalOptions {
  int num_class = 1;
  double conf_thresh = 0.5;
};

struct EvalReport {
  double precision = 0, recall = 0, f1 = 0;
  double map = 0, map50 = 0, map75 = 0;
  std::map<int, double> class_ap;    // averaged over thresholds
  std::map<int, double> class_ap50;
  int tp = 0, fp = 0, fn = 0;
  int images = 0, truths = 0, detections = 0;
  double conf_thresh = 0.5;
};

/// IoU threshold k of the ten used for mAP: 0.50 + 0.05 k.
double threshold(int k);

/// AP of one class at one threshold across images; -1 when the class has
/// no ground truth.
double class_average_precision(const std::vector<ImageResult>& images, int class_id,
                               double iou_thresh);

/// Throws DataError when there is no ground truth at all.
EvalReport evaluate(const std::vector<ImageResult>& images, const EvalOptions& options);

nlohmann::ordered_json to_json(const EvalReport& report);
std::string csv_header();
std::string csv_row(const EvalReport& report);

}  // namespace msf::eval

#endif  // MSFNET_EVALKIT_H_
