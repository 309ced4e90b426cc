// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "msfnet/error.h"
#include "msfnet/evalkit.h"

using namespace msf;
using namespace msf::eval;

namespace {

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 40), s(4, 16);
  const double x = u(rng), y = u(rng);
  return {x, y, x + s(rng), y + s(rng)};
}

Box jittered(const Box& b, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> j(-amount, amount);
  Box o{b.x1 + j(rng), b.y1 + j(rng), b.x2 + j(rng), b.y2 + j(rng)};
  return o.valid() ? o : b;
}

std::vector<ImageResult> random_set(std::mt19937_64& rng, int images, int classes) {
  std::uniform_real_distribution<double> conf(0, 1);
  std::vector<ImageResult> out(static_cast<std::size_t>(images));
  for (auto& img : out) {
    const int n = static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) img.truths.push_back({random_box(rng), static_cast<int>(rng() % classes)});
    for (const auto& g : img.truths) {
      if (rng() % 4 != 0) img.detections.push_back({jittered(g.box, rng, 3), conf(rng), g.class_id});
      if (rng() % 5 == 0) img.detections.push_back({jittered(g.box, rng, 6), conf(rng), g.class_id});
    }
    const int fp = static_cast<int>(rng() % 3);
    for (int i = 0; i < fp; ++i)
      img.detections.push_back({random_box(rng), std::round(conf(rng) * 4) / 4,
                                static_cast<int>(rng() % classes)});
  }
  return out;
}

double oracle_iou(const Box& a, const Box& b) {
  const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return w * h / (a.area() + b.area() - w * h);
}

// Straightforward recomputation: global ranking by (confidence desc, image,
// position), per-image greedy matching, AP as the mean over true positives
// of the best precision at or beyond their rank.
double oracle_ap(const std::vector<ImageResult>& set, int cls, double thr) {
  struct Entry {
    double conf;
    std::size_t img, pos;
  };
  std::vector<Entry> all;
  int gts = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < set[i].detections.size(); ++k)
      if (set[i].detections[k].class_id == cls) all.push_back({set[i].detections[k].confidence, i, k});
    for (const auto& g : set[i].truths) gts += g.class_id == cls;
  }
  if (gts == 0) return -1;
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.img != b.img) return a.img < b.img;
    return a.pos < b.pos;
  });
  std::vector<std::vector<bool>> used(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) used[i].assign(set[i].truths.size(), false);
  std::vector<bool> hit;
  for (const auto& e : all) {
    const auto& d = set[e.img].detections[e.pos];
    int best = -1;
    double bv = 0;
    for (std::size_t j = 0; j < set[e.img].truths.size(); ++j) {
      const auto& g = set[e.img].truths[j];
      if (used[e.img][j] || g.class_id != cls) continue;
      const double v = oracle_iou(d.box, g.box);
      if (v >= thr && v > bv) {
        bv = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) used[e.img][static_cast<std::size_t>(best)] = true;
    hit.push_back(best >= 0);
  }
  std::vector<double> prec(hit.size());
  int tp = 0;
  for (std::size_t k = 0; k < hit.size(); ++k) {
    tp += hit[k];
    prec[k] = static_cast<double>(tp) / (k + 1);
  }
  double ap = 0;
  for (std::size_t k = 0; k < hit.size(); ++k) {
    if (!hit[k]) continue;
    ap += *std::max_element(prec.begin() + static_cast<std::ptrdiff_t>(k), prec.end()) / gts;
  }
  return ap;
}

}  // namespace

TEST_CASE("matching rules") {
  std::vector<GroundTruth> gt{{{0, 0, 10, 10}, 0}};
  std::vector<Detection> one{{{0, 0, 10, 6}, 0.9, 0}};
  CHECK(iou(one[0].box, gt[0].box) == doctest::Approx(0.6));
  CHECK(match_greedy(one, gt, 0.5).true_positive[0]);
  CHECK_FALSE(match_greedy(one, gt, 0.75).true_positive[0]);
  std::vector<Detection> two{{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 10}, 0.8, 0}};
  auto m = match_greedy(two, gt, 0.5);
  CHECK(m.true_positive == std::vector<bool>{true, false});
  std::vector<Detection> wrong{{{0, 0, 10, 10}, 0.9, 1}};
  CHECK_FALSE(match_greedy(wrong, gt, 0.5).true_positive[0]);
}

TEST_CASE("greedy matching against exhaustive assignment") {
  std::mt19937_64 rng(2);
  int differ = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int nd = 1 + static_cast<int>(rng() % 5), ng = 1 + static_cast<int>(rng() % 5);
    std::vector<GroundTruth> gts;
    for (int i = 0; i < ng; ++i) gts.push_back({random_box(rng), 0});
    std::vector<Detection> dets;
    for (int i = 0; i < nd; ++i) dets.push_back({jittered(gts[rng() % ng].box, rng, 5), 1.0 - 0.1 * i, 0});
    auto m = match_greedy(dets, gts, 0.5);
    const int greedy = static_cast<int>(std::count(m.true_positive.begin(), m.true_positive.end(), true));
    // Maximum matching over all injective det -> gt maps.
    int best = 0;
    std::vector<int> perm(static_cast<std::size_t>(std::max(nd, ng)));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      int count = 0;
      for (int i = 0; i < nd; ++i) {
        const int g = perm[static_cast<std::size_t>(i)];
        if (g < ng && iou(dets[i].box, gts[g].box) >= 0.5) ++count;
      }
      best = std::max(best, count);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(greedy <= best);
    differ += greedy != best;
    std::vector<int> seen;
    for (int g : m.matched_truth) {
      if (g < 0) continue;
      CHECK(std::find(seen.begin(), seen.end(), g) == seen.end());
      seen.push_back(g);
    }
  }
  MESSAGE("greedy below optimum in " << differ << " of 300 cases");
}

TEST_CASE("average precision golden cases") {
  CHECK(average_precision({{0.9, true}}, 1) == 1.0);
  // Ranks: TP, FP, TP with two truths; precision/recall points (1, 0.5),
  // (0.5, 0.5), (2/3, 1).
  CHECK(average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2) ==
        doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)).epsilon(1e-15));
  CHECK(average_precision({}, 3) == 0.0);
  CHECK_THROWS_AS(average_precision({{0.5, true}}, 0), DataError);
}

TEST_CASE("threshold straddle") {
  std::vector<ImageResult> set(1);
  set[0].truths = {{{0, 0, 10, 10}, 0}};
  set[0].detections = {{{0, 0, 10, 6}, 0.9, 0}};
  auto r = evaluate(set, {1, 0.5});
  CHECK(r.map50 == 1.0);
  CHECK(r.map75 == 0.0);
  CHECK(class_average_precision(set, 0, 0.75) == 0.0);
  for (int k = 0; k < 10; ++k) CHECK(threshold(k) == doctest::Approx(0.5 + 0.05 * k));
}

TEST_CASE("perfect and empty detectors") {
  std::mt19937_64 rng(3);
  auto set = random_set(rng, 10, 3);
  for (auto& img : set) {
    img.detections.clear();
    for (const auto& g : img.truths) img.detections.push_back({g.box, 0.99, g.class_id});
  }
  auto r = evaluate(set, {3, 0.5});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.map == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.map50 == 1.0);
  for (auto& img : set) img.detections.clear();
  auto e = evaluate(set, {3, 0.5});
  CHECK(e.precision == 0.0);
  CHECK(e.recall == 0.0);
  CHECK(e.f1 == 0.0);
  CHECK(e.map == 0.0);
  for (auto [c, ap] : e.class_ap) CHECK(ap == 0.0);
  std::vector<ImageResult> none(2);
  CHECK_THROWS_AS(evaluate(none, {3, 0.5}), DataError);
}

TEST_CASE("classes without ground truth are left out of the mean") {
  std::vector<ImageResult> set(1);
  set[0].truths = {{{0, 0, 10, 10}, 0}};
  set[0].detections = {{{0, 0, 10, 10}, 0.9, 0}, {{20, 20, 30, 30}, 0.9, 4}};
  auto r = evaluate(set, {5, 0.5});
  CHECK(r.map50 == 1.0);
  CHECK(r.class_ap.size() == 1);
  CHECK(r.fp == 1);
}

TEST_CASE("evaluate matches the brute-force recomputation") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto set = random_set(rng, 20, 3);
    bool any = false;
    for (const auto& img : set) any |= !img.truths.empty();
    if (!any) continue;
    auto r = evaluate(set, {3, 0.5});
    std::vector<double> per(10, 0);
    int classes = 0;
    for (int c = 0; c < 3; ++c) {
      if (oracle_ap(set, c, 0.5) < 0) continue;
      ++classes;
      for (int k = 0; k < 10; ++k) per[k] += oracle_ap(set, c, 0.5 + 0.05 * k);
    }
    double map = 0;
    for (double& v : per) map += (v /= classes) / 10;
    CHECK(r.map == doctest::Approx(map).epsilon(1e-12));
    CHECK(r.map50 == doctest::Approx(per[0]).epsilon(1e-12));
    CHECK(r.map75 == doctest::Approx(per[5]).epsilon(1e-12));
    // P/R at IoU 0.5 over detections with confidence >= 0.5.
    int tp = 0, kept = 0, gts = 0;
    for (const auto& img : set) {
      gts += static_cast<int>(img.truths.size());
      std::vector<Detection> d;
      for (const auto& x : img.detections)
        if (x.confidence >= 0.5) d.push_back(x);
      std::stable_sort(d.begin(), d.end(), [](auto& a, auto& b) { return a.confidence > b.confidence; });
      kept += static_cast<int>(d.size());
      std::vector<bool> used(img.truths.size(), false);
      for (const auto& x : d) {
        int best = -1;
        double bv = 0;
        for (std::size_t j = 0; j < img.truths.size(); ++j) {
          if (used[j] || img.truths[j].class_id != x.class_id) continue;
          const double v = oracle_iou(x.box, img.truths[j].box);
          if (v >= 0.5 && v > bv) {
            bv = v;
            best = static_cast<int>(j);
          }
        }
        if (best >= 0) {
          used[static_cast<std::size_t>(best)] = true;
          ++tp;
        }
      }
    }
    CHECK(r.tp == tp);
    CHECK(r.fp == kept - tp);
    CHECK(r.fn == gts - tp);
  }
}

TEST_CASE("metric invariants") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto set = random_set(rng, 12, 2);
    bool any = false;
    for (const auto& img : set) any |= !img.truths.empty();
    if (!any) continue;
    auto r = evaluate(set, {2, 0.5});
    double ap95 = 0;
    int classes = 0;
    for (int c = 0; c < 2; ++c) {
      const double v = class_average_precision(set, c, threshold(9));
      if (v >= 0) {
        ap95 += v;
        ++classes;
      }
    }
    ap95 /= classes;
    CHECK(r.map50 >= r.map - 1e-15);
    CHECK(r.map >= ap95 - 1e-15);
    for (double v : {r.precision, r.recall, r.f1, r.map}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

    auto scaled = set;
    for (auto& img : scaled)
      for (auto& d : img.detections) d.confidence *= 0.5;
    auto s = evaluate(scaled, {2, 0.5});
    CHECK(s.map == r.map);
    CHECK(s.map50 == r.map50);
    for (auto [c, ap] : r.class_ap) CHECK(s.class_ap[c] == ap);

    auto dup = set;
    for (auto& img : dup) {
      const auto n = img.detections.size();
      for (std::size_t i = 0; i < n; ++i) img.detections.push_back(img.detections[i]);
    }
    auto d = evaluate(dup, {2, 0.5});
    for (auto [c, ap] : r.class_ap) CHECK(d.class_ap[c] <= ap + 1e-15);
  }
}

TEST_CASE("report serialization") {
  std::vector<ImageResult> set(1);
  set[0].truths = {{{0, 0, 10, 10}, 0}};
  set[0].detections = {{{0, 0, 10, 10}, 0.9, 0}};
  auto r = evaluate(set, {1, 0.5});
  auto j = to_json(r);
  CHECK(j["mAP50"] == 1.0);
  CHECK(j.begin().key() == "precision");
  CHECK(csv_header().find("mAP75") != std::string::npos);
  CHECK(csv_row(r).rfind("1.000000,1.000000,1.000000", 0) == 0);
}
