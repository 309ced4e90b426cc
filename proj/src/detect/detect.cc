// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/detect.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msfnet/error.h"
#include "msfnet/ops.h"
#include "msfnet/tape.h"

namespace msf::detect {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double cell_offset(double t) { return kGridScale * sigmoid(t) - 0.5 * (kGridScale - 1.0); }

// log(1 + e^x) without overflow.
double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double log_sum_exp(const double* z, int n, int skip = -1) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    if (i != skip) mx = std::max(mx, z[i]);
  double s = 0;
  for (int i = 0; i < n; ++i)
    if (i != skip) s += std::exp(z[i] - mx);
  return mx + std::log(s);
}

void check_raw(const RawPredictions& raw, int num_class) {
  const int depth = 3 * slot_depth(num_class);
  for (int l = 0; l < 3; ++l) {
    if (!raw[l].defined() || raw[l].rank() != 3 || raw[l].dim(0) != depth) {
      throw ShapeError("detect: level " + std::to_string(l + 1) + " predictions " +
                       (raw[l].defined() ? shape_string(raw[l].shape()) : "undefined") +
                       " do not have depth " + std::to_string(depth));
    }
  }
}

struct Stride {
  double x, y;
};

Stride stride_of(const LevelGrid& g, int w, int h) {
  return {static_cast<double>(w) / g.cols, static_cast<double>(h) / g.rows};
}

}  // namespace

AnchorSet AnchorSet::defaults(int width, int height) {
  AnchorSet a;
  const double base[3] = {0.1, 0.25, 0.4};
  const double spread[3] = {0.8, 1.0, 1.2};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      a.wh[i * 3 + j] = {base[i] * spread[j] * width, base[i] * spread[j] * height};
  return a;
}

void AnchorSet::validate() const {
  for (std::size_t j = 0; j < wh.size(); ++j) {
    if (!(wh[j][0] > 0) || !(wh[j][1] > 0)) {
      throw DataError("anchor " + std::to_string(j) + " must have positive size");
    }
    if (j > 0 && wh[j][0] * wh[j][1] < wh[j - 1][0] * wh[j - 1][1]) {
      throw DataError("anchors must be sorted ascending by area");
    }
  }
}

Tensor spp(const Tensor& f, std::span<const int> kernels) {
  if (f.rank() != 3) throw ShapeError("spp: expected [C x H x W], got " + shape_string(f.shape()));
  const auto extent = std::min(f.dim(1), f.dim(2));
  std::vector<Tensor> parts{f};
  for (int k : kernels) {
    if (k <= 0 || k % 2 == 0) throw ShapeError("spp: kernel " + std::to_string(k) + " must be odd");
    if ((k - 1) / 2 > extent) {
      throw ShapeError("spp: kernel " + std::to_string(k) + " is too large for a " +
                       std::to_string(f.dim(1)) + "x" + std::to_string(f.dim(2)) + " map");
    }
    parts.push_back(ops::maxpool2d(f, k, 1, (k - 1) / 2));
  }
  return ops::concat(parts, 0);
}

Detector::Detector(std::array<int, 3> ch, const DetectConfig& config,
                   nn::Initializer& init)
    : config_(config) {
  if (config.num_class <= 0) throw ShapeError("detect: num_class must be positive");
  if (!(config.objectness_prior > 0 && config.objectness_prior < 1)) {
    throw ShapeError("detect: objectness_prior must be in (0, 1)");
  }
  const int spp_ch = ch[0] * (1 + static_cast<int>(config.spp_kernels.size()));
  spp_reduce = nn::Conv2d(spp_ch, ch[0], 1, 1, 0, init);
  top_down2 = nn::Conv2d(ch[0] + ch[1], ch[1], 3, 1, 1, init);
  top_down3 = nn::Conv2d(ch[1] + ch[2], ch[2], 3, 1, 1, init);
  down3 = nn::Conv2d(ch[2], ch[2], 3, 2, 1, init);
  bottom_up2 = nn::Conv2d(ch[2] + ch[1], ch[1], 3, 1, 1, init);
  down2 = nn::Conv2d(ch[1], ch[1], 3, 2, 1, init);
  bottom_up1 = nn::Conv2d(ch[1] + ch[0], ch[0], 3, 1, 1, init);
  const int depth = 3 * slot_depth(config.num_class);
  const double prior = std::log(config.objectness_prior / (1 - config.objectness_prior));
  for (int l = 0; l < 3; ++l) {
    heads[l] = nn::Conv2d(ch[l], depth, 1, 1, 0, init);
    if (config.head_init_std > 0) {
      heads[l].weight = init.normal(heads[l].weight.shape(), config.head_init_std);
    }
    for (int a = 0; a < 3; ++a) {
      heads[l].bias.mutable_data()[a * slot_depth(config.num_class) + 4] = prior;
    }
  }
}

ScalePyramid Detector::neck(const ScalePyramid& p) const {
  auto conv = [](const nn::Conv2d& c, const Tensor& x) { return ops::relu(c.forward(x)); };
  const Tensor p1 = conv(spp_reduce, spp(p[0], config_.spp_kernels));
  const Tensor t2 = conv(top_down2, ops::concat({ops::upsample_nearest(p1, 2), p[1]}, 0));
  const Tensor t3 = conv(top_down3, ops::concat({ops::upsample_nearest(t2, 2), p[2]}, 0));
  const Tensor n2 = conv(bottom_up2, ops::concat({conv(down3, t3), t2}, 0));
  const Tensor n1 = conv(bottom_up1, ops::concat({conv(down2, n2), p1}, 0));
  ScalePyramid out;
  out[0] = n1;
  out[1] = n2;
  out[2] = t3;
  return out;
}

RawPredictions Detector::head(const ScalePyramid& p) const {
  RawPredictions out;
  for (int l = 0; l < 3; ++l) out[l] = heads[l].forward(p[l]);
  return out;
}

void Detector::collect(nn::NamedParams& out, const std::string& prefix) const {
  spp_reduce.collect(out, prefix + ".spp_reduce");
  top_down2.collect(out, prefix + ".top_down2");
  top_down3.collect(out, prefix + ".top_down3");
  down3.collect(out, prefix + ".down3");
  bottom_up2.collect(out, prefix + ".bottom_up2");
  down2.collect(out, prefix + ".down2");
  bottom_up1.collect(out, prefix + ".bottom_up1");
  for (int l = 0; l < 3; ++l) heads[l].collect(out, prefix + ".head" + std::to_string(l + 1));
}

GridSizes grid_sizes(const RawPredictions& raw) {
  GridSizes g;
  for (int l = 0; l < 3; ++l) {
    if (!raw[l].defined() || raw[l].rank() != 3) throw ShapeError("detect: malformed predictions");
    g[l] = {static_cast<int>(raw[l].dim(2)), static_cast<int>(raw[l].dim(1))};
  }
  return g;
}

std::vector<Assignment> assign(std::span<const GroundTruth> truths, const AnchorSet& anchors,
                               const GridSizes& grids, int image_width, int image_height) {
  std::vector<Assignment> out;
  for (std::size_t t = 0; t < truths.size(); ++t) {
    const Box& b = truths[t].box;
    if (!b.valid()) throw DataError("assign: ground-truth box " + std::to_string(t) + " is degenerate");
    int best = 0;
    double best_iou = -1;
    for (int j = 0; j < 9; ++j) {
      const double aw = anchors.wh[j][0], ah = anchors.wh[j][1];
      const double inter = std::min(aw, b.width()) * std::min(ah, b.height());
      const double v = inter / (aw * ah + b.area() - inter);
      if (v > best_iou) {
        best_iou = v;
        best = j;
      }
    }
    Assignment a;
    a.anchor_index = best;
    a.truth = static_cast<int>(t);
    a.slot.level = AnchorSet::level_of(best);
    a.slot.anchor = best % 3;
    const auto& g = grids[a.slot.level];
    const Stride st = stride_of(g, image_width, image_height);
    const double bx = 0.5 * (b.x1 + b.x2), by = 0.5 * (b.y1 + b.y2);
    a.slot.cx = std::clamp(static_cast<int>(std::floor(bx / st.x)), 0, g.cols - 1);
    a.slot.cy = std::clamp(static_cast<int>(std::floor(by / st.y)), 0, g.rows - 1);
    const bool taken = std::any_of(out.begin(), out.end(), [&](const Assignment& o) {
      return o.slot.level == a.slot.level && o.slot.anchor == a.slot.anchor &&
             o.slot.cx == a.slot.cx && o.slot.cy == a.slot.cy;
    });
    if (!taken) out.push_back(a);
  }
  return out;
}

Encoding encode(const Box& box, const Slot& slot, const AnchorSet& anchors, int image_width,
                int image_height, const GridSizes& grids) {
  const Stride st = stride_of(grids[slot.level], image_width, image_height);
  const auto& anchor = anchors.wh[(2 - slot.level) * 3 + slot.anchor];
  auto logit = [](double offset) {
    const double p = std::clamp((offset + 0.5 * (kGridScale - 1.0)) / kGridScale, 1e-12, 1 - 1e-12);
    return std::log(p / (1 - p));
  };
  Encoding e;
  e.tx = logit(0.5 * (box.x1 + box.x2) / st.x - slot.cx);
  e.ty = logit(0.5 * (box.y1 + box.y2) / st.y - slot.cy);
  e.tw = std::log(box.width() / anchor[0]);
  e.th = std::log(box.height() / anchor[1]);
  return e;
}

Box decode_box(const Encoding& e, const Slot& slot, const AnchorSet& anchors, int image_width,
               int image_height, const GridSizes& grids) {
  const Stride st = stride_of(grids[slot.level], image_width, image_height);
  const auto& anchor = anchors.wh[(2 - slot.level) * 3 + slot.anchor];
  const double bx = (cell_offset(e.tx) + slot.cx) * st.x;
  const double by = (cell_offset(e.ty) + slot.cy) * st.y;
  const double bw = anchor[0] * std::exp(e.tw), bh = anchor[1] * std::exp(e.th);
  return {bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
}

std::vector<Detection> decode(const RawPredictions& raw, const AnchorSet& anchors, int num_class,
                              double conf_thresh, int image_width, int image_height,
                              bool objectness) {
  check_raw(raw, num_class);
  const auto grids = grid_sizes(raw);
  const int d = slot_depth(num_class);
  std::vector<Detection> out;
  std::vector<double> z(static_cast<std::size_t>(num_class));
  for (int l = 0; l < 3; ++l) {
    const auto& g = grids[l];
    const auto plane = static_cast<std::int64_t>(g.rows) * g.cols;
    auto data = raw[l].data();
    for (int a = 0; a < 3; ++a)
      for (int cy = 0; cy < g.rows; ++cy)
        for (int cx = 0; cx < g.cols; ++cx) {
          auto at = [&](int k) { return data[(a * d + k) * plane + cy * g.cols + cx]; };
          for (int c = 0; c < num_class; ++c) z[c] = at(5 + c);
          const double lse = log_sum_exp(z.data(), num_class);
          const int best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
          double conf = std::exp(z[best] - lse);
          if (objectness) conf *= sigmoid(at(4));
          if (conf < conf_thresh) continue;
          Slot slot{l, a, cx, cy};
          Box b = decode_box({at(0), at(1), at(2), at(3)}, slot, anchors, image_width,
                             image_height, grids);
          b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image_width));
          b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(image_width));
          b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image_height));
          b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(image_height));
          if (!b.valid()) continue;
          out.push_back({b, conf, best});
        }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double nms_thresh) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.area() != b.box.area()) return a.box.area() > b.box.area();
    return a.box.x1 < b.box.x1;
  });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > nms_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

LossTerms loss(const RawPredictions& raw, std::span<const GroundTruth> truths,
               std::span<const Assignment> assignment, const AnchorSet& anchors,
               const DetectConfig& config, int image_width, int image_height) {
  const int nc = config.num_class;
  check_raw(raw, nc);
  const auto grids = grid_sizes(raw);
  const int d = slot_depth(nc);

  struct Positive {
    int level;
    std::int64_t base;  // offset of the slot's tx channel at its cell
    std::int64_t plane;
    Encoding target;
    double ox, oy;
    int class_id;
  };
  std::vector<Positive> pos;
  std::array<std::vector<char>, 3> assigned;
  for (int l = 0; l < 3; ++l) {
    assigned[l].assign(static_cast<std::size_t>(3) * grids[l].rows * grids[l].cols, 0);
  }
  for (const auto& a : assignment) {
    if (a.truth < 0 || a.truth >= static_cast<int>(truths.size())) {
      throw DataError("loss: assignment refers to a missing ground truth");
    }
    const auto& gt = truths[a.truth];
    if (gt.class_id < 0 || gt.class_id >= nc) {
      throw DataError("loss: class id " + std::to_string(gt.class_id) + " outside [0, " +
                      std::to_string(nc) + ")");
    }
    const auto& s = a.slot;
    const auto& g = grids[s.level];
    const std::int64_t plane = static_cast<std::int64_t>(g.rows) * g.cols;
    Positive p;
    p.level = s.level;
    p.plane = plane;
    p.base = static_cast<std::int64_t>(s.anchor) * d * plane + s.cy * g.cols + s.cx;
    p.target = encode(gt.box, s, anchors, image_width, image_height, grids);
    const Stride st = stride_of(g, image_width, image_height);
    p.ox = 0.5 * (gt.box.x1 + gt.box.x2) / st.x - s.cx;
    p.oy = 0.5 * (gt.box.y1 + gt.box.y2) / st.y - s.cy;
    p.class_id = gt.class_id;
    pos.push_back(p);
    assigned[s.level][(static_cast<std::size_t>(s.anchor) * g.rows + s.cy) * g.cols + s.cx] = 1;
  }

  const double n_pos = static_cast<double>(pos.size());
  double box = 0, cls = 0, obj_pos = 0, obj_neg = 0;
  std::int64_t n_neg = 0;
  std::vector<double> z(static_cast<std::size_t>(nc));
  for (const auto& p : pos) {
    auto data = raw[p.level].data();
    auto at = [&](int k) { return data[p.base + k * p.plane]; };
    const double ex = cell_offset(at(0)) - p.ox, ey = cell_offset(at(1)) - p.oy;
    const double ew = at(2) - p.target.tw, eh = at(3) - p.target.th;
    box += ex * ex + ey * ey + ew * ew + eh * eh;
    for (int c = 0; c < nc; ++c) z[c] = at(5 + c);
    const double lse = log_sum_exp(z.data(), nc);
    for (int c = 0; c < nc; ++c) {
      if (c == p.class_id) {
        cls += lse - z[c];
      } else {
        cls += lse - log_sum_exp(z.data(), nc, c);
      }
    }
    if (config.objectness) obj_pos += softplus(-at(4));
  }
  if (config.objectness) {
    for (int l = 0; l < 3; ++l) {
      const auto& g = grids[l];
      const std::int64_t plane = static_cast<std::int64_t>(g.rows) * g.cols;
      auto data = raw[l].data();
      for (int a = 0; a < 3; ++a)
        for (std::int64_t cell = 0; cell < plane; ++cell) {
          if (assigned[l][a * plane + cell]) continue;
          obj_neg += softplus(data[(a * d + 4) * plane + cell]);
          ++n_neg;
        }
    }
  }
  const double box_term = pos.empty() ? 0.0 : box / (4 * n_pos);
  double objective = 0;
  if (!pos.empty()) objective += (cls + obj_pos) / n_pos;
  const double norm = std::max(1.0, n_pos);
  if (n_neg > 0) objective += config.negative_weight * obj_neg / norm;

  Tensor both = make_tensor({2}, {box_term, objective});
  require_finite(both.data(), "detection loss");
  std::vector<Tensor> inputs(raw.begin(), raw.end());
  if (needs_grad({raw[0], raw[1], raw[2]})) {
    std::array<TensorImpl*, 3> impls{raw[0].impl(), raw[1].impl(), raw[2].impl()};
    TensorImpl* out = both.impl();
    const double neg_scale = n_neg > 0 ? config.negative_weight / norm : 0;
    const bool use_obj = config.objectness;
    record_op(both, inputs, [=, assigned = std::move(assigned), pos = std::move(pos)] {
      const double gb = out->grad[0], go = out->grad[1];
      std::array<std::span<double>, 3> grads;
      for (int l = 0; l < 3; ++l) {
        if (impls[l]->requires_grad) grads[l] = impls[l]->grad_buffer();
      }
      std::vector<double> zz(static_cast<std::size_t>(nc)), pr(static_cast<std::size_t>(nc));
      for (const auto& p : pos) {
        if (grads[p.level].empty()) continue;
        const auto& data = impls[p.level]->data;
        auto g = grads[p.level];
        auto idx = [&](int k) { return p.base + k * p.plane; };
        const double sb = gb / (4 * n_pos);
        const double sx = sigmoid(data[idx(0)]), sy = sigmoid(data[idx(1)]);
        g[idx(0)] += sb * 2 * (cell_offset(data[idx(0)]) - p.ox) * kGridScale * sx * (1 - sx);
        g[idx(1)] += sb * 2 * (cell_offset(data[idx(1)]) - p.oy) * kGridScale * sy * (1 - sy);
        g[idx(2)] += sb * 2 * (data[idx(2)] - p.target.tw);
        g[idx(3)] += sb * 2 * (data[idx(3)] - p.target.th);
        const double so = go / n_pos;
        for (int c = 0; c < nc; ++c) zz[c] = data[idx(5 + c)];
        const double lse = log_sum_exp(zz.data(), nc);
        for (int c = 0; c < nc; ++c) pr[c] = std::exp(zz[c] - lse);
        // d(-log p_t) = p - e_t.
        for (int k = 0; k < nc; ++k) g[idx(5 + k)] += so * (pr[k] - (k == p.class_id ? 1 : 0));
        // d(-log(1 - p_c)) = p_c e_c - p_c p / (1 - p_c), with 1 - p_c from the
        // log-sum-exp of the other logits.
        for (int c = 0; c < nc; ++c) {
          if (c == p.class_id) continue;
          const double q = std::exp(log_sum_exp(zz.data(), nc, c) - lse);
          for (int k = 0; k < nc; ++k) {
            if (k == c) {
              g[idx(5 + k)] += so * pr[c];
            } else {
              g[idx(5 + k)] -= so * pr[c] * pr[k] / q;
            }
          }
        }
        if (use_obj) g[idx(4)] += so * (sigmoid(data[idx(4)]) - 1);
      }
      if (use_obj && neg_scale > 0) {
        for (int l = 0; l < 3; ++l) {
          if (grads[l].empty()) continue;
          const auto& data = impls[l]->data;
          const auto plane = static_cast<std::int64_t>(assigned[l].size() / 3);
          for (int a = 0; a < 3; ++a)
            for (std::int64_t cell = 0; cell < plane; ++cell) {
              if (assigned[l][a * plane + cell]) continue;
              const auto i = (a * d + 4) * plane + cell;
              grads[l][i] += go * neg_scale * sigmoid(data[i]);
            }
        }
      }
    });
  }
  LossTerms terms;
  terms.box = ops::slice(both, 0, 0, 1);
  terms.objective = ops::slice(both, 0, 1, 2);
  terms.total = ops::add(terms.box, terms.objective);
  return terms;
}

}  // namespace msf::detect
