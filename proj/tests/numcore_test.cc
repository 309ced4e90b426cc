// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "msfnet/error.h"
#include "msfnet/gradcheck.h"
#include "msfnet/ops.h"
#include "msfnet/optim.h"
#include "msfnet/tape.h"
#include "msfnet/tensor_io.h"
#include "test_util.h"

namespace msf {
namespace {

using testing::random_tensor;

// Direct loop reference for conv2d, kept free of the im2col path.
std::vector<double> reference_conv2d(const Tensor& x, const Tensor& k,
                                     const Tensor& b, int stride, int pad) {
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = k.dim(0), ks = k.dim(2);
  const auto ho = (h + 2 * pad - ks) / stride + 1;
  const auto wo = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(co * ho * wo, 0.0);
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        double acc = b.defined() ? b.data()[o] : 0.0;
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x.at({c, iy, ix}) * k.at({o, c, ky, kx});
            }
        out[(o * ho + y) * wo + xx] = acc;
      }
  return out;
}

// Scatter-form reference for the transposed convolution.
std::vector<double> reference_conv_transpose2d(const Tensor& x, const Tensor& k,
                                               int stride, int pad, int op) {
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = k.dim(1), ks = k.dim(2);
  const auto ho = (h - 1) * stride - 2 * pad + ks + op;
  const auto wo = (w - 1) * stride - 2 * pad + ks + op;
  std::vector<double> out(co * ho * wo, 0.0);
  for (int c = 0; c < ci; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int o = 0; o < co; ++o)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int oy = y * stride - pad + ky, ox = xx * stride - pad + kx;
              if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
              out[(o * ho + oy) * wo + ox] += x.at({c, y, xx}) * k.at({c, o, ky, kx});
            }
  return out;
}

double check(const std::function<Tensor()>& f, const std::vector<Tensor>& in) {
  return grad_check(f, in).max_rel_error;
}

TEST_CASE("elementwise examples") {
  auto relu = ops::relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(relu.data().begin(), relu.data().end()) ==
        std::vector<double>{0, 0, 2});
  auto sum = ops::add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}));
  CHECK(sum.data()[0] == 4);
  CHECK(sum.data()[1] == 6);
  CHECK(ops::sigmoid(Tensor::from({1}, {0})).item() == 0.5);
  CHECK(ops::scale(Tensor::from({1}, {3}), -2).item() == -6);
}

TEST_CASE("elementwise broadcasts along leading dims only") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  auto c = ops::add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at({1, 2}) == 36);
  auto d = ops::sub(b, a);
  CHECK(d.at({0, 0}) == 9);
  try {
    ops::add(a, Tensor::from({2}, {1, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("tensors reject non-finite data and bad shapes") {
  CHECK_THROWS_AS(Tensor::from({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(
      Tensor::from({1}, {std::numeric_limits<double>::infinity()}),
      NumericError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
}

TEST_CASE("matmul examples and gradient") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto p = ops::matmul(eye, m);
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) ==
        std::vector<double>{1, 2, 3, 4});
  CHECK(ops::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}))
            .item() == 11);
  CHECK_THROWS_AS(ops::matmul(m, Tensor::zeros({3, 1})), ShapeError);

  std::mt19937_64 rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  auto r = grad_check([&] { return ops::sum(ops::matmul(a, b)); }, {a}, opts);
  CHECK(r.max_rel_error < 1e-6);
  Tensor w = random_tensor({3, 2}, rng);
  CHECK(check([&] { return ops::sum(ops::mul(ops::matmul(a, b), w)); },
              {a, b}) < 1e-4);
}

TEST_CASE("softmax examples, stability and gradient") {
  auto u = ops::softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto s = ops::softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(s.data()[0] == doctest::Approx(1.0));
  CHECK(s.data()[1] < 1e-300);

  std::mt19937_64 rng(2);
  for (int axis : {0, 1, 2}) {
    Tensor x = random_tensor({3, 4, 5}, rng);
    std::mt19937_64 wrng(9);
    Tensor w = random_tensor(x.shape(), wrng);
    CHECK(check([&] { return ops::sum(ops::mul(ops::softmax(x, axis), w)); },
                {x}) < 1e-5);
  }
}

TEST_CASE("softmax sums to one along the reduced axis") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t rows = 1 + trial % 7, cols = 1 + (trial * 5) % 11;
    Tensor x = random_tensor({rows, cols}, rng, -50.0, 50.0);
    auto y = ops::softmax(x, 1);
    for (std::int64_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) {
        CHECK(y.at({r, c}) >= 0.0);
        total += y.at({r, c});
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("conv2d shape formula") {
  CHECK(ops::conv_output_extent(19, 3, 1, 2) == 10);
  CHECK(ops::conv_output_extent(76, 5, 2, 4) == 19);
  CHECK(ops::conv_output_extent(38, 3, 1, 2) == 19);
  CHECK_THROWS_AS(ops::conv_output_extent(2, 5, 1, 1), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({1, 2, 2}),
                              Tensor::zeros({1, 1, 5, 5}), {}, 1, 1),
                  ShapeError);
}

TEST_CASE("conv2d identity kernel") {
  auto y = ops::conv2d(Tensor::from({1, 1, 1}, {3.5}),
                       Tensor::from({1, 1, 1, 1}, {1}), {}, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y.item() == 3.5);
}

TEST_CASE("conv2d agrees with the direct loop reference") {
  std::mt19937_64 rng(4);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      for (int ks : {1, 3, 5}) {
        Tensor x = random_tensor({3, 8, 8}, rng);
        Tensor k = random_tensor({4, 3, ks, ks}, rng);
        Tensor b = random_tensor({4}, rng);
        auto y = ops::conv2d(x, k, b, stride, pad);
        auto ref = reference_conv2d(x, k, b, stride, pad);
        REQUIRE(ref.size() == y.data().size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
          CHECK(std::abs(ref[i] - y.data()[i]) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("conv_transpose2d shapes and reference") {
  CHECK(ops::conv_transpose_output_extent(10, 3, 1, 2, 0) == 19);
  CHECK(ops::conv_transpose_output_extent(19, 3, 1, 2, 1) == 38);
  CHECK(ops::conv_transpose_output_extent(19, 5, 2, 4, 3) == 76);
  CHECK_THROWS_AS(ops::conv_transpose_output_extent(10, 3, 1, 2, 2),
                  ShapeError);

  std::mt19937_64 rng(5);
  for (int stride : {1, 2, 3}) {
    for (int pad : {0, 1}) {
      Tensor x = random_tensor({2, 4, 5}, rng);
      Tensor k = random_tensor({2, 3, 3, 3}, rng);
      const int op = stride - 1;
      auto y = ops::conv_transpose2d(x, k, {}, stride, pad, op);
      auto ref = reference_conv_transpose2d(x, k, stride, pad, op);
      REQUIRE(ref.size() == y.data().size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(ref[i] - y.data()[i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("conv then conv_transpose restores spatial dims") {
  // For every legal (H, K, P, S) there is an output_padding in [0, S) that
  // inverts the forward extent.
  int checked = 0;
  for (std::int64_t h = 1; h <= 40; ++h)
    for (std::int64_t k = 1; k <= 5; ++k)
      for (std::int64_t p = 0; p < k; ++p)
        for (std::int64_t s = 1; s <= 4; ++s) {
          if (h + 2 * p < k) continue;
          const auto down = ops::conv_output_extent(h, k, p, s);
          const auto base = (down - 1) * s - 2 * p + k;
          const auto op = h - base;
          REQUIRE(op >= 0);
          REQUIRE(op < s);
          CHECK(ops::conv_transpose_output_extent(down, k, p, s, op) == h);
          ++checked;
        }
  CHECK(checked > 1000);
}

TEST_CASE("maxpool and adaptive maxpool") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 10, 10}, rng);
  auto p = ops::maxpool2d(x, 2, 2);
  CHECK(p.shape() == Shape{2, 5, 5});
  auto a = ops::adaptive_maxpool2d(x, 5, 5);
  CHECK(a.shape() == Shape{2, 5, 5});
  for (std::int64_t i = 0; i < p.numel(); ++i) CHECK(a.data()[i] == p.data()[i]);

  auto c = ops::maxpool2d(Tensor::full({1, 6, 6}, 1.25), 3, 3);
  for (double v : c.data()) CHECK(v == 1.25);
  auto ca = ops::adaptive_maxpool2d(Tensor::full({1, 7, 9}, -0.5), 3, 4);
  for (double v : ca.data()) CHECK(v == -0.5);

  CHECK_THROWS_AS(ops::adaptive_maxpool2d(Tensor::zeros({1, 3, 3}), 5, 5),
                  ShapeError);
  auto overlap = ops::adaptive_maxpool2d(Tensor::zeros({1, 3, 3}), 5, 5,
                                         ops::AdaptiveWindows::kAllowOverlap);
  CHECK(overlap.shape() == Shape{1, 5, 5});
}

TEST_CASE("adaptive maxpool matches an explicit window partition") {
  std::mt19937_64 rng(7);
  for (auto [h, th] : std::vector<std::pair<int, int>>{
           {10, 5}, {7, 5}, {12, 5}, {3, 5}, {6, 5}, {19, 4}}) {
    Tensor x = random_tensor({1, h, h}, rng);
    auto y = ops::adaptive_maxpool2d(x, th, th,
                                     ops::AdaptiveWindows::kAllowOverlap);
    for (int oy = 0; oy < th; ++oy) {
      const int y0 = static_cast<int>(std::floor(double(oy) * h / th));
      const int y1 = static_cast<int>(std::ceil(double(oy + 1) * h / th));
      for (int ox = 0; ox < th; ++ox) {
        const int x0 = static_cast<int>(std::floor(double(ox) * h / th));
        const int x1 = static_cast<int>(std::ceil(double(ox + 1) * h / th));
        double best = -1e300;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) best = std::max(best, x.at({0, iy, ix}));
        CHECK(y.at({0, oy, ox}) == best);
      }
    }
  }
}

TEST_CASE("maxpool gradient ties go to the lowest flat index") {
  Tensor x = Tensor::full({1, 2, 2}, 3.0, true);
  {
    Tape tape;
    auto y = ops::maxpool2d(x, 2, 2);
    tape.backward(ops::sum(y));
  }
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("upsample_nearest") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({2, 5, 5}, rng);
  auto y = ops::upsample_nearest(x, 2);
  CHECK(y.shape() == Shape{2, 10, 10});
  CHECK(y.at({1, 7, 3}) == x.at({1, 3, 1}));
  auto id = ops::upsample_nearest(x, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(id.data()[i] == x.data()[i]);
  const double sx = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  const double sy = std::accumulate(y.data().begin(), y.data().end(), 0.0);
  CHECK(sy == doctest::Approx(4.0 * sx).epsilon(1e-12));
}

TEST_CASE("layernorm and concat") {
  Tensor c = Tensor::full({2, 4}, 7.0);
  auto z = ops::layernorm(c, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-5);
  for (double v : z.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(10);
  Tensor x = random_tensor({3, 16}, rng);
  auto y = ops::layernorm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-12);
  for (int r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (int e = 0; e < 16; ++e) m += y.at({r, e});
    m /= 16;
    for (int e = 0; e < 16; ++e) v += (y.at({r, e}) - m) * (y.at({r, e}) - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }

  auto cat = ops::concat({Tensor::zeros({2, 3}), Tensor::full({2, 5}, 1.0)}, 1);
  CHECK(cat.shape() == Shape{2, 8});
  CHECK(cat.at({1, 2}) == 0.0);
  CHECK(cat.at({1, 3}) == 1.0);
  CHECK_THROWS_AS(ops::concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1),
                  ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  {
    Tape tape;
    tape.backward(ops::sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  {
    Tape tape;
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);
  {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(ops::mul(x, x)), ShapeError);
  }
}

TEST_CASE("inference mode records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  auto y = ops::relu(x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  auto z = ops::relu(x);
  CHECK(z.requires_grad());
  CHECK(tape.size() == 1);
}

TEST_CASE("every differentiable op passes a randomized gradient check") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    std::uniform_int_distribution<int> ext(2, 5);
    const int c = ext(rng), h = ext(rng) + 2, w = ext(rng) + 2;
    Tensor x = random_tensor({c, h, w}, rng);
    Tensor k = random_tensor({3, c, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor kt = random_tensor({c, 2, 3, 3}, rng);
    Tensor m = random_tensor({h, w}, rng);
    Tensor m2 = random_tensor({w, 3}, rng);
    Tensor v = random_tensor({w}, rng);
    Tensor g = random_tensor({w}, rng), be = random_tensor({w}, rng);
    std::vector<int> ids = {1, 0, 1, 2};
    Tensor table = random_tensor({3, w}, rng);

    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return ops::add(m, v); }},
        {"sub", [&] { return ops::sub(v, m); }},
        {"mul", [&] { return ops::mul(m, v); }},
        {"relu", [&] { return ops::relu(m); }},
        {"sigmoid", [&] { return ops::sigmoid(m); }},
        {"scale", [&] { return ops::scale(m, -1.7); }},
        {"matmul", [&] { return ops::matmul(m, m2); }},
        {"softmax", [&] { return ops::softmax(m, 1); }},
        {"conv2d", [&] { return ops::conv2d(x, k, b, 2, 1); }},
        {"conv_transpose2d",
         [&] { return ops::conv_transpose2d(x, kt, {}, 2, 1, 1); }},
        {"maxpool2d", [&] { return ops::maxpool2d(x, 3, 1, 1); }},
        {"adaptive_maxpool2d",
         [&] {
           return ops::adaptive_maxpool2d(x, 3, 3,
                                          ops::AdaptiveWindows::kAllowOverlap);
         }},
        {"upsample_nearest", [&] { return ops::upsample_nearest(x, 2); }},
        {"layernorm", [&] { return ops::layernorm(m, g, be, 1e-5); }},
        {"concat", [&] { return ops::concat({m, ops::scale(m, 2.0)}, 0); }},
        {"slice", [&] { return ops::slice(x, 1, 1, h - 1); }},
        {"reshape", [&] { return ops::reshape(m, {w, h}); }},
        {"transpose", [&] { return ops::transpose(m); }},
        {"gather_rows", [&] { return ops::gather_rows(table, ids); }},
        {"dropout", [&] { return ops::dropout(m, 0.5, 42); }},
    };
    for (const auto& [name, fn] : cases) {
      CAPTURE(name);
      Tensor probe_out = fn();
      std::mt19937_64 wrng(trial * 100 + 3);
      Tensor weights = random_tensor(probe_out.shape(), wrng);
      auto loss = [&] { return ops::sum(ops::mul(fn(), weights)); };
      auto r = grad_check(loss, {x, k, b, kt, m, m2, v, g, be, table});
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("grad check skips stencils that cross a kink") {
  Tensor x = Tensor::from({3}, {4e-6, -0.5, 0.7});
  auto f = [&] { return ops::sum(ops::relu(x)); };
  auto r = grad_check(f, {x});
  CHECK(r.coords_skipped == 1);
  CHECK(r.coords_checked == 2);
  CHECK(r.max_rel_error < 1e-9);

  // The same stencil without branch tracking misses the true slope.
  x.mutable_data()[0] = 4e-6;
  const double up = [&] { x.mutable_data()[0] = 4e-6 + 1e-5; return f().item(); }();
  const double down = [&] { x.mutable_data()[0] = 4e-6 - 1e-5; return f().item(); }();
  CHECK((up - down) / 2e-5 == doctest::Approx(0.7));

  Tensor p = Tensor::from({1, 2, 2}, {1.0, 1.0 + 5e-6, 0.2, 0.3});
  auto r2 = grad_check([&] { return ops::sum(ops::maxpool2d(p, 2, 2)); }, {p});
  CHECK(r2.coords_skipped == 2);
  CHECK(r2.coords_checked == 2);

  auto r3 = grad_check(f, {x}, {.max_coords_per_input = 2, .seed = 3});
  CHECK(r3.coords_checked == 2);
}

TEST_CASE("adam") {
  {
    Tensor w = Tensor::from({2}, {0.3, -0.7}, true);
    AdamOptions o;
    o.weight_decay = 0.0;
    Adam adam({w}, o);
    w.zero_grad();
    adam.step();
    CHECK(w.data()[0] == 0.3);
    CHECK(w.data()[1] == -0.7);
  }
  {
    Tensor w = Tensor::from({1}, {1.0}, true);
    Adam adam({w}, AdamOptions{});
    {
      Tape tape;
      tape.backward(ops::sum(ops::mul(w, w)));
    }
    adam.step();
    CHECK(std::abs(w.item()) < 1.0);
  }
  {
    // f(w) = (w0 - 1)^2 + 3 (w1 + 2)^2 has its minimum at (1, -2).
    Tensor w = Tensor::from({2}, {4.0, 3.0}, true);
    Tensor target = Tensor::from({2}, {1.0, -2.0});
    Tensor weight = Tensor::from({2}, {1.0, 3.0});
    AdamOptions o;
    o.lr = 0.1;
    o.weight_decay = 0.0;
    Adam adam({w}, o);
    for (int i = 0; i < 200; ++i) {
      adam.zero_grad();
      Tape tape;
      auto d = ops::sub(w, target);
      tape.backward(ops::sum(ops::mul(weight, ops::mul(d, d))));
      adam.step();
    }
    CHECK(std::abs(w.data()[0] - 1.0) < 1e-3);
    CHECK(std::abs(w.data()[1] + 2.0) < 1e-3);
  }
}

TEST_CASE("tensor text dump round-trips exactly") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 3, 4}, rng);
  auto dir = testing::scratch_dir("tensor_io");
  dump_tensor_text(x, (dir / "x.txt").string());
  Tensor y = load_tensor_text((dir / "x.txt").string());
  CHECK(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

}  // namespace
}  // namespace msf
