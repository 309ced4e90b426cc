// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/evalkit.h"

#include <algorithm>
#include <cstdio>
#include <tuple>

#include "msfnet/error.h"

namespace msf::eval {

MatchResult match_greedy(std::span<const Detection> dets, std::span<const GroundTruth> truths,
                         double iou_thresh) {
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.matched_truth.assign(dets.size(), -1);
  std::vector<bool> used(truths.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (used[j] || truths[j].class_id != dets[i].class_id) continue;
      const double v = iou(dets[i].box, truths[j].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(j);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      r.true_positive[i] = true;
      r.matched_truth[i] = best;
    }
  }
  return r;
}

double average_precision(std::vector<std::pair<double, bool>> ranked, int num_truths) {
  if (num_truths <= 0) throw DataError("average_precision: no ground truth");
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [conf, hit] : ranked) {
    (hit ? tp : fp) += 1;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_truths);
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

double threshold(int k) { return 0.5 + 0.05 * k; }

namespace {

// Detections of one image sorted by confidence (stable), with their
// original indices.
std::vector<Detection> ranked(const std::vector<Detection>& dets) {
  std::vector<Detection> out = dets;
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.confidence > b.confidence;
  });
  return out;
}

}  // namespace

double class_average_precision(const std::vector<ImageResult>& images, int class_id,
                               double iou_thresh) {
  int truths = 0;
  std::vector<std::pair<double, bool>> scored;
  for (const auto& img : images) {
    std::vector<Detection> dets;
    for (const auto& d : img.detections)
      if (d.class_id == class_id) dets.push_back(d);
    std::vector<GroundTruth> gts;
    for (const auto& g : img.truths)
      if (g.class_id == class_id) gts.push_back(g);
    truths += static_cast<int>(gts.size());
    dets = ranked(dets);
    auto m = match_greedy(dets, gts, iou_thresh);
    for (std::size_t i = 0; i < dets.size(); ++i) scored.emplace_back(dets[i].confidence, m.true_positive[i]);
  }
  if (truths == 0) return -1;
  return average_precision(std::move(scored), truths);
}

EvalReport evaluate(const std::vector<ImageResult>& images, const EvalOptions& options) {
  if (options.num_class <= 0) throw DataError("evaluate: num_class must be positive");
  EvalReport r;
  r.conf_thresh = options.conf_thresh;
  r.images = static_cast<int>(images.size());
  for (const auto& img : images) {
    r.truths += static_cast<int>(img.truths.size());
    r.detections += static_cast<int>(img.detections.size());
    for (const auto& g : img.truths) {
      if (g.class_id < 0 || g.class_id >= options.num_class) {
        throw DataError("evaluate: ground-truth class " + std::to_string(g.class_id) +
                        " outside [0, " + std::to_string(options.num_class) + ")");
      }
    }
  }
  if (r.truths == 0) throw DataError("evaluate: no ground truth boxes; metrics are undefined");

  std::vector<double> per_threshold(10, 0.0);
  int scored_classes = 0;
  for (int c = 0; c < options.num_class; ++c) {
    double sum = 0;
    bool present = true;
    for (int k = 0; k < 10; ++k) {
      const double ap = class_average_precision(images, c, threshold(k));
      if (ap < 0) {
        present = false;
        break;
      }
      per_threshold[static_cast<std::size_t>(k)] += ap;
      sum += ap;
      if (k == 0) r.class_ap50[c] = ap;
    }
    if (!present) continue;
    ++scored_classes;
    r.class_ap[c] = sum / 10;
  }
  for (auto& v : per_threshold) v /= scored_classes;
  r.map50 = per_threshold[0];
  r.map75 = per_threshold[5];
  double total = 0;
  for (double v : per_threshold) total += v;
  r.map = total / 10;

  for (const auto& img : images) {
    std::vector<Detection> kept;
    for (const auto& d : img.detections)
      if (d.confidence >= options.conf_thresh) kept.push_back(d);
    kept = ranked(kept);
    auto m = match_greedy(kept, img.truths, 0.5);
    const int tp = static_cast<int>(std::count(m.true_positive.begin(), m.true_positive.end(), true));
    r.tp += tp;
    r.fp += static_cast<int>(kept.size()) - tp;
  }
  r.fn = r.truths - r.tp;
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = static_cast<double>(r.tp) / r.truths;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["mAP"] = r.map;
  j["mAP50"] = r.map50;
  j["mAP75"] = r.map75;
  j["class_ap"] = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.class_ap) j["class_ap"][std::to_string(c)] = v;
  j["class_ap50"] = nlohmann::ordered_json::object();
  for (const auto& [c, v] : r.class_ap50) j["class_ap50"][std::to_string(c)] = v;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["images"] = r.images;
  j["ground_truths"] = r.truths;
  j["detections"] = r.detections;
  j["conf_thresh"] = r.conf_thresh;
  return j;
}

std::string csv_header() {
  return "precision,recall,f1,mAP,mAP50,mAP75,tp,fp,fn,images,ground_truths,detections";
}

std::string csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%d,%d,%d,%d,%d", r.precision,
                r.recall, r.f1, r.map, r.map50, r.map75, r.tp, r.fp, r.fn, r.images, r.truths,
                r.detections);
  return buf;
}

}  // namespace msf::eval
