// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "msfnet/error.h"
#include "msfnet/gradcheck.h"
#include "msfnet/tape.h"

namespace msf::ops {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor output_like(Shape shape) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0));
}

void check_output(const Tensor& out, const char* op) {
  require_finite(out.data(), op);
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " +
                     std::to_string(rank));
  }
  return axis;
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " +
                     std::to_string(rank) + ", got " +
                     (t.defined() ? shape_string(t.shape()) : "undefined"));
  }
}

// col: [C*K*K x out_h*out_w]; reads src [C x H x W] at
// (oy*stride - padding + ky, ox*stride - padding + kx).
void im2col(const double* src, std::int64_t channels, std::int64_t h,
            std::int64_t w, std::int64_t k, std::int64_t stride,
            std::int64_t padding, std::int64_t out_h, std::int64_t out_w,
            double* col) {
  const std::int64_t cols = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * cols;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * stride - padding + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src_row = src + (c * h + iy) * w;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t ix = ox * stride - padding + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col back into dst [C x H x W].
void col2im(const double* col, std::int64_t channels, std::int64_t h,
            std::int64_t w, std::int64_t k, std::int64_t stride,
            std::int64_t padding, std::int64_t out_h, std::int64_t out_w,
            double* dst) {
  const std::int64_t cols = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * cols;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst_row = dst + (c * h + iy) * w;
          const double* src = row + oy * out_w;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_bias(const Tensor& bias, std::int64_t channels, const char* op) {
  if (!bias.defined()) return;
  if (bias.rank() != 1 || bias.dim(0) != channels) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(bias.shape()) +
                     " does not match " + std::to_string(channels) +
                     " output channels");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b,
                   double factor) {
  const bool binary = kind == Elementwise::kAdd || kind == Elementwise::kSub ||
                      kind == Elementwise::kMul;
  if (!binary) {
    Tensor out = output_like(a.shape());
    auto x = a.data();
    auto y = out.mutable_data();
    const std::size_t n = x.size();
    switch (kind) {
      case Elementwise::kRelu:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        if (recording_branches()) {
          std::vector<std::int64_t> active;
          for (std::size_t i = 0; i < n; ++i)
            if (x[i] > 0.0) active.push_back(static_cast<std::int64_t>(i));
          record_branches(active);
        }
        break;
      case Elementwise::kSigmoid:
        for (std::size_t i = 0; i < n; ++i) {
          y[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                             : std::exp(x[i]) / (1.0 + std::exp(x[i]));
        }
        break;
      default:
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * factor;
        break;
    }
    check_output(out, "elementwise");
    if (needs_grad({a})) {
      TensorImpl* pa = a.impl();
      TensorImpl* po = out.impl();
      record_op(out, {a}, [pa, po, kind, factor] {
        auto g = std::span<const double>(po->grad);
        auto ga = pa->grad_buffer();
        const std::size_t n = g.size();
        switch (kind) {
          case Elementwise::kRelu:
            for (std::size_t i = 0; i < n; ++i) {
              if (pa->data[i] > 0.0) ga[i] += g[i];
            }
            break;
          case Elementwise::kSigmoid:
            for (std::size_t i = 0; i < n; ++i) {
              const double s = po->data[i];
              ga[i] += g[i] * s * (1.0 - s);
            }
            break;
          default:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
            break;
        }
      });
    }
    return out;
  }

  if (!b.defined()) throw ShapeError("elementwise: binary op needs two inputs");
  Shape out_shape;
  if (a.shape() == b.shape() || is_suffix(b.shape(), a.shape())) {
    out_shape = a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    out_shape = b.shape();
  } else {
    throw ShapeError("elementwise: cannot broadcast " +
                     shape_string(a.shape()) + " with " +
                     shape_string(b.shape()));
  }
  Tensor out = output_like(out_shape);
  auto x = a.data();
  auto z = b.data();
  auto y = out.mutable_data();
  const std::size_t n = y.size();
  const std::size_t na = x.size();
  const std::size_t nb = z.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i % na];
    const double v = z[i % nb];
    switch (kind) {
      case Elementwise::kAdd: y[i] = u + v; break;
      case Elementwise::kSub: y[i] = u - v; break;
      default: y[i] = u * v; break;
    }
  }
  check_output(out, "elementwise");
  if (needs_grad({a, b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = out.impl();
    record_op(out, {a, b}, [pa, pb, po, kind] {
      const auto& g = po->grad;
      const std::size_t n = g.size();
      const std::size_t na = pa->data.size();
      const std::size_t nb = pb->data.size();
      if (pa->requires_grad) {
        auto ga = pa->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          const double d = kind == Elementwise::kMul ? pb->data[i % nb] : 1.0;
          ga[i % na] += g[i] * d;
        }
      }
      if (pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          double d = 1.0;
          if (kind == Elementwise::kSub) d = -1.0;
          if (kind == Elementwise::kMul) d = pa->data[i % na];
          gb[i % nb] += g[i] * d;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims disagree, " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  }
  Tensor out = output_like({m, n});
  MutMap(out.mutable_data().data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  check_output(out, "matmul");
  if (needs_grad({a, b})) {
    TensorImpl* pa = a.impl();
    TensorImpl* pb = b.impl();
    TensorImpl* po = out.impl();
    record_op(out, {a, b}, [pa, pb, po, m, k, n] {
      ConstMap g(po->grad.data(), m, n);
      if (pa->requires_grad) {
        MutMap(pa->grad_buffer().data(), m, k).noalias() +=
            g * ConstMap(pb->data.data(), k, n).transpose();
      }
      if (pb->requires_grad) {
        MutMap(pb->grad_buffer().data(), k, n).noalias() +=
            ConstMap(pa->data.data(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = output_like(x.shape());
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t e = 0; e < s.extent; ++e) {
        mx = std::max(mx, in[base + e * s.inner]);
      }
      double total = 0.0;
      for (std::int64_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(in[base + e * s.inner] - mx);
        y[base + e * s.inner] = v;
        total += v;
      }
      for (std::int64_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= total;
    }
  }
  check_output(out, "softmax");
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [px, po, s] {
      auto gx = px->grad_buffer();
      const auto& g = po->grad;
      const auto& y = po->data;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const std::int64_t base = o * s.extent * s.inner + i;
          double dot = 0.0;
          for (std::int64_t e = 0; e < s.extent; ++e) {
            const auto j = base + e * s.inner;
            dot += g[j] * y[j];
          }
          for (std::int64_t e = 0; e < s.extent; ++e) {
            const auto j = base + e * s.inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution family

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t padding, std::int64_t stride) {
  if (in <= 0 || kernel <= 0 || padding < 0 || stride <= 0) {
    throw ShapeError("conv: invalid geometry in=" + std::to_string(in) +
                     " K=" + std::to_string(kernel) +
                     " P=" + std::to_string(padding) +
                     " S=" + std::to_string(stride));
  }
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) +
                     " exceeds padded extent " +
                     std::to_string(in + 2 * padding) +
                     " (non-positive output extent)");
  }
  return span / stride + 1;
}

std::int64_t conv_transpose_output_extent(std::int64_t in, std::int64_t kernel,
                                          std::int64_t padding,
                                          std::int64_t stride,
                                          std::int64_t output_padding) {
  if (in <= 0 || kernel <= 0 || padding < 0 || stride <= 0) {
    throw ShapeError("conv_transpose: invalid geometry");
  }
  if (output_padding < 0 || output_padding >= stride) {
    throw ShapeError("conv_transpose: output_padding " +
                     std::to_string(output_padding) +
                     " must be in [0, stride=" + std::to_string(stride) + ")");
  }
  const std::int64_t out =
      (in - 1) * stride - 2 * padding + kernel + output_padding;
  if (out <= 0) {
    throw ShapeError("conv_transpose: non-positive output extent " +
                     std::to_string(out));
  }
  return out;
}

std::int64_t pool_output_extent(std::int64_t in, std::int64_t kernel,
                                std::int64_t stride, std::int64_t padding) {
  if (kernel <= 0 || stride <= 0 || padding < 0 || 2 * padding >= kernel + 1) {
    throw ShapeError("maxpool: invalid geometry K=" + std::to_string(kernel) +
                     " S=" + std::to_string(stride) +
                     " P=" + std::to_string(padding));
  }
  if (kernel > in + 2 * padding) {
    throw ShapeError("maxpool: kernel " + std::to_string(kernel) +
                     " exceeds extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::int64_t stride, std::int64_t padding) {
  require_rank(x, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != ci || kernel.dim(3) != k) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  check_bias(bias, co, "conv2d");
  const auto ho = conv_output_extent(h, k, padding, stride);
  const auto wo = conv_output_extent(w, k, padding, stride);
  const std::int64_t rows = ci * k * k, cols = ho * wo;

  auto col = std::make_shared<std::vector<double>>(rows * cols);
  im2col(x.data().data(), ci, h, w, k, stride, padding, ho, wo, col->data());
  Tensor out = output_like({co, ho, wo});
  MutMap y(out.mutable_data().data(), co, cols);
  y.noalias() = ConstMap(kernel.data().data(), co, rows) *
                ConstMap(col->data(), rows, cols);
  if (bias.defined()) {
    for (std::int64_t c = 0; c < co; ++c) y.row(c).array() += bias.data()[c];
  }
  check_output(out, "conv2d");

  if (needs_grad({x, kernel, bias})) {
    TensorImpl* px = x.impl();
    TensorImpl* pk = kernel.impl();
    TensorImpl* pb = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* po = out.impl();
    record_op(out, {x, kernel, bias},
              [=, col = std::move(col)] {
                ConstMap g(po->grad.data(), co, cols);
                if (pk->requires_grad) {
                  MutMap(pk->grad_buffer().data(), co, rows).noalias() +=
                      g * ConstMap(col->data(), rows, cols).transpose();
                }
                if (pb != nullptr && pb->requires_grad) {
                  auto gb = pb->grad_buffer();
                  for (std::int64_t c = 0; c < co; ++c) gb[c] += g.row(c).sum();
                }
                if (px->requires_grad) {
                  RowMat dcol =
                      ConstMap(pk->data.data(), co, rows).transpose() * g;
                  col2im(dcol.data(), ci, h, w, k, stride, padding, ho, wo,
                         px->grad_buffer().data());
                }
              });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel,
                        const Tensor& bias, std::int64_t stride,
                        std::int64_t padding, std::int64_t output_padding) {
  require_rank(x, 3, "conv_transpose2d", "input");
  require_rank(kernel, 4, "conv_transpose2d", "kernel");
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != ci || kernel.dim(3) != k) {
    throw ShapeError("conv_transpose2d: kernel " +
                     shape_string(kernel.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  check_bias(bias, co, "conv_transpose2d");
  const auto ho = conv_transpose_output_extent(h, k, padding, stride,
                                               output_padding);
  const auto wo = conv_transpose_output_extent(w, k, padding, stride,
                                               output_padding);
  const std::int64_t rows = co * k * k, cols = h * w;

  RowMat col = ConstMap(kernel.data().data(), ci, rows).transpose() *
               ConstMap(x.data().data(), ci, cols);
  Tensor out = output_like({co, ho, wo});
  col2im(col.data(), co, ho, wo, k, stride, padding, h, w,
         out.mutable_data().data());
  if (bias.defined()) {
    auto y = out.mutable_data();
    for (std::int64_t c = 0; c < co; ++c) {
      const double b = bias.data()[c];
      for (std::int64_t i = 0; i < ho * wo; ++i) y[c * ho * wo + i] += b;
    }
  }
  check_output(out, "conv_transpose2d");

  if (needs_grad({x, kernel, bias})) {
    TensorImpl* px = x.impl();
    TensorImpl* pk = kernel.impl();
    TensorImpl* pb = bias.defined() ? bias.impl() : nullptr;
    TensorImpl* po = out.impl();
    record_op(out, {x, kernel, bias}, [=] {
      RowMat gcol(rows, cols);
      im2col(po->grad.data(), co, ho, wo, k, stride, padding, h, w,
             gcol.data());
      if (px->requires_grad) {
        MutMap(px->grad_buffer().data(), ci, cols).noalias() +=
            ConstMap(pk->data.data(), ci, rows) * gcol;
      }
      if (pk->requires_grad) {
        MutMap(pk->grad_buffer().data(), ci, rows).noalias() +=
            ConstMap(px->data.data(), ci, cols) * gcol.transpose();
      }
      if (pb != nullptr && pb->requires_grad) {
        auto gb = pb->grad_buffer();
        for (std::int64_t c = 0; c < co; ++c) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < ho * wo; ++i) {
            acc += po->grad[c * ho * wo + i];
          }
          gb[c] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling and resampling

namespace {

// Shared tail of both max-pool variants: records gradient routing to the
// stored argmax positions.
void record_argmax(const Tensor& x, const Tensor& out,
                   std::vector<std::int64_t> argmax) {
  record_branches(argmax);
  if (!needs_grad({x})) return;
  TensorImpl* px = x.impl();
  TensorImpl* po = out.impl();
  record_op(out, {x}, [px, po, argmax = std::move(argmax)] {
    auto gx = px->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      gx[argmax[i]] += po->grad[i];
    }
  });
}

}  // namespace

Tensor maxpool2d(const Tensor& x, std::int64_t kernel, std::int64_t stride,
                 std::int64_t padding) {
  require_rank(x, 3, "maxpool2d", "input");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ho = pool_output_extent(h, kernel, stride, padding);
  const auto wo = pool_output_extent(w, kernel, stride, padding);
  Tensor out = output_like({c, ho, wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(c * ho * wo));
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const auto iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const auto ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const auto idx = (ch * h + iy) * w + ix;
            if (best_idx < 0 || in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        const auto o = (ch * ho + oy) * wo + ox;
        y[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  record_argmax(x, out, std::move(argmax));
  return out;
}

Tensor adaptive_maxpool2d(const Tensor& x, std::int64_t target_h,
                          std::int64_t target_w, AdaptiveWindows windows) {
  require_rank(x, 3, "adaptive_maxpool2d", "input");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (target_h <= 0 || target_w <= 0) {
    throw ShapeError("adaptive_maxpool2d: target must be positive");
  }
  if (windows == AdaptiveWindows::kStrict && (target_h > h || target_w > w)) {
    throw ShapeError("adaptive_maxpool2d: target " + std::to_string(target_h) +
                     "x" + std::to_string(target_w) + " larger than input " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out = output_like({c, target_h, target_w});
  std::vector<std::int64_t> argmax(
      static_cast<std::size_t>(c * target_h * target_w));
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < target_h; ++oy) {
      const auto y0 = (oy * h) / target_h;
      const auto y1 = ((oy + 1) * h + target_h - 1) / target_h;
      for (std::int64_t ox = 0; ox < target_w; ++ox) {
        const auto x0 = (ox * w) / target_w;
        const auto x1 = ((ox + 1) * w + target_w - 1) / target_w;
        std::int64_t best_idx = (ch * h + y0) * w + x0;
        for (auto iy = y0; iy < y1; ++iy) {
          for (auto ix = x0; ix < x1; ++ix) {
            const auto idx = (ch * h + iy) * w + ix;
            if (in[idx] > in[best_idx]) best_idx = idx;
          }
        }
        const auto o = (ch * target_h + oy) * target_w + ox;
        y[o] = in[best_idx];
        argmax[o] = best_idx;
      }
    }
  }
  record_argmax(x, out, std::move(argmax));
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::int64_t factor) {
  require_rank(x, 3, "upsample_nearest", "input");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ho = h * factor, wo = w * factor;
  Tensor out = output_like({c, ho, wo});
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      const double* src = in.data() + (ch * h + oy / factor) * w;
      double* dst = y.data() + (ch * ho + oy) * wo;
      for (std::int64_t ox = 0; ox < wo; ++ox) dst[ox] = src[ox / factor];
    }
  }
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [=] {
      auto gx = px->grad_buffer();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            gx[(ch * h + oy / factor) * w + ox / factor] +=
                po->grad[(ch * ho + oy) * wo + ox];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps, int axis) {
  axis = normalize_axis(axis, x.rank(), "layernorm");
  const AxisSplit s = split_at(x.shape(), axis);
  for (const Tensor* p : {&gamma, &beta}) {
    if (!p->defined() || p->rank() != 1 || p->dim(0) != s.extent) {
      throw ShapeError("layernorm: affine parameters must have shape [" +
                       std::to_string(s.extent) + "]");
    }
  }
  if (eps <= 0.0) throw ShapeError("layernorm: eps must be positive");
  Tensor out = output_like(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(s.outer * s.inner);
  auto in = x.data();
  auto y = out.mutable_data();
  auto g = gamma.data();
  auto b = beta.data();
  const double n = static_cast<double>(s.extent);
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      const std::int64_t base = o * s.extent * s.inner + i;
      double mu = 0.0;
      for (std::int64_t e = 0; e < s.extent; ++e) mu += in[base + e * s.inner];
      mu /= n;
      double var = 0.0;
      for (std::int64_t e = 0; e < s.extent; ++e) {
        const double d = in[base + e * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double r = 1.0 / std::sqrt(var + eps);
      (*inv_std)[o * s.inner + i] = r;
      for (std::int64_t e = 0; e < s.extent; ++e) {
        const auto j = base + e * s.inner;
        const double xh = (in[j] - mu) * r;
        (*xhat)[j] = xh;
        y[j] = g[e] * xh + b[e];
      }
    }
  }
  check_output(out, "layernorm");
  if (needs_grad({x, gamma, beta})) {
    TensorImpl* px = x.impl();
    TensorImpl* pg = gamma.impl();
    TensorImpl* pb = beta.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x, gamma, beta}, [=] {
      const auto& gy = po->grad;
      const auto& xh = *xhat;
      if (pg->requires_grad || pb->requires_grad) {
        auto gg = pg->grad_buffer();
        auto gb = pb->grad_buffer();
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t e = 0; e < s.extent; ++e) {
            for (std::int64_t i = 0; i < s.inner; ++i) {
              const auto j = (o * s.extent + e) * s.inner + i;
              gg[e] += gy[j] * xh[j];
              gb[e] += gy[j];
            }
          }
        }
      }
      if (!px->requires_grad) return;
      auto gx = px->grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const std::int64_t base = o * s.extent * s.inner + i;
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t e = 0; e < s.extent; ++e) {
            const auto j = base + e * s.inner;
            const double d = gy[j] * pg->data[e];
            m1 += d;
            m2 += d * xh[j];
          }
          m1 /= n;
          m2 /= n;
          const double r = (*inv_std)[o * s.inner + i];
          for (std::int64_t e = 0; e < s.extent; ++e) {
            const auto j = base + e * s.inner;
            const double d = gy[j] * pg->data[e];
            gx[j] += r * (d - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts.front().rank();
  axis = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (int d = 0; ok && d < rank; ++d) {
      if (d != axis && p.shape()[d] != parts.front().shape()[d]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: extent mismatch between " +
                       shape_string(parts.front().shape()) + " and " +
                       shape_string(p.shape()) + " on axis " +
                       std::to_string(axis));
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  Tensor out = output_like(out_shape);
  auto y = out.mutable_data();
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto chunk = p.shape()[axis] * s.inner;
    auto src = p.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk,
                  y.data() + o * s.extent * s.inner + offset * s.inner);
    }
    offset += p.shape()[axis];
  }
  if (Tape::current() != nullptr) {
    std::vector<TensorImpl*> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    TensorImpl* po = out.impl();
    record_op(out, parts, [=] {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        TensorImpl* p = impls[k];
        if (!p->requires_grad) continue;
        auto gp = p->grad_buffer();
        const auto chunk = p->shape[axis] * s.inner;
        for (std::int64_t o = 0; o < s.outer; ++o) {
          const double* src =
              po->grad.data() + o * s.extent * s.inner + offsets[k] * s.inner;
          double* dst = gp.data() + o * chunk;
          for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end) {
  axis = normalize_axis(axis, x.rank(), "slice");
  if (begin < 0 || end > x.shape()[axis] || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " +
                     shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const AxisSplit s = split_at(x.shape(), axis);
  const auto chunk = (end - begin) * s.inner;
  Tensor out = output_like(out_shape);
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(in.data() + o * s.extent * s.inner + begin * s.inner, chunk,
                y.data() + o * chunk);
  }
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [=] {
      auto gx = px->grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        double* dst = gx.data() + o * s.extent * s.inner + begin * s.inner;
        const double* src = po->grad.data() + o * chunk;
        for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) +
                     " as " + shape_string(shape));
  }
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("reshape: extents must be positive");
  }
  Tensor out = make_tensor(std::move(shape),
                           std::vector<double>(x.data().begin(), x.data().end()));
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [px, po] {
      auto gx = px->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += po->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose", "input");
  const auto m = x.dim(0), n = x.dim(1);
  Tensor out = output_like({n, m});
  MutMap(out.mutable_data().data(), n, m) =
      ConstMap(x.data().data(), m, n).transpose();
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [=] {
      MutMap(px->grad_buffer().data(), m, n) +=
          ConstMap(po->grad.data(), n, m).transpose();
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = make_tensor({1}, {total});
  check_output(out, "sum");
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [px, po] {
      const double g = po->grad[0];
      for (auto& v : px->grad_buffer()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows", "table");
  const auto rows = table.dim(0), dim = table.dim(1);
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= rows) {
      throw ShapeError("gather_rows: id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(rows) + ")");
    }
  }
  const auto n = static_cast<std::int64_t>(ids.size());
  Tensor out = output_like({n, dim});
  auto y = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(table.data().data() + ids[i] * dim, dim, y.data() + i * dim);
  }
  if (needs_grad({table})) {
    TensorImpl* pt = table.impl();
    TensorImpl* po = out.impl();
    std::vector<int> keep(ids.begin(), ids.end());
    record_op(out, {table}, [pt, po, keep = std::move(keep), dim] {
      auto gt = pt->grad_buffer();
      for (std::size_t i = 0; i < keep.size(); ++i) {
        for (std::int64_t d = 0; d < dim; ++d) {
          gt[keep[i] * dim + d] += po->grad[i * dim + d];
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.data().size());
  const double s = 1.0 / (1.0 - p);
  for (auto& m : *mask) m = keep(rng) ? s : 0.0;
  Tensor out = output_like(x.shape());
  auto in = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] * (*mask)[i];
  if (needs_grad({x})) {
    TensorImpl* px = x.impl();
    TensorImpl* po = out.impl();
    record_op(out, {x}, [px, po, mask] {
      auto gx = px->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += po->grad[i] * (*mask)[i];
      }
    });
  }
  return out;
}

}  // namespace msf::ops
