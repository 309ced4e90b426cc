// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/srproxy.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <unistd.h>

#include "msfnet/error.h"
#include "msfnet/image.h"

namespace msf::sr {

namespace {

void check_image(const Tensor& image, const char* op) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError(std::string(op) + ": expected a [3 x H x W] image, got " +
                     (image.defined() ? shape_string(image.shape())
                                      : std::string("undefined")));
  }
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

Tensor upscale_nearest(const Tensor& image, int f) {
  const auto h = image.dim(1), w = image.dim(2);
  std::vector<double> out(static_cast<std::size_t>(3 * h * w * f * f));
  auto in = image.data();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h * f; ++y)
      for (std::int64_t x = 0; x < w * f; ++x)
        out[(c * h * f + y) * w * f + x] = in[(c * h + y / f) * w + x / f];
  return Tensor::from({3, h * f, w * f}, std::move(out));
}

Tensor upscale_bilinear(const Tensor& image, int f) {
  const auto h = image.dim(1), w = image.dim(2);
  const auto ho = h * f, wo = w * f;
  std::vector<double> out(static_cast<std::size_t>(3 * ho * wo));
  auto in = image.data();
  auto coord = [f](std::int64_t o, std::int64_t n, std::int64_t& i0,
                   std::int64_t& i1, double& t) {
    double s = (static_cast<double>(o) + 0.5) / f - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::int64_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    t = s - static_cast<double>(i0);
  };
  for (std::int64_t y = 0; y < ho; ++y) {
    std::int64_t y0, y1;
    double ty;
    coord(y, h, y0, y1, ty);
    for (std::int64_t x = 0; x < wo; ++x) {
      std::int64_t x0, x1;
      double tx;
      coord(x, w, x0, x1, tx);
      for (std::int64_t c = 0; c < 3; ++c) {
        const double* p = in.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - tx) + p[y0 * w + x1] * tx;
        const double bot = p[y1 * w + x0] * (1 - tx) + p[y1 * w + x1] * tx;
        out[(c * ho + y) * wo + x] = std::clamp(top * (1 - ty) + bot * ty, 0.0, 1.0);
      }
    }
  }
  return Tensor::from({3, ho, wo}, std::move(out));
}

Tensor upscale_external(const Tensor& image, int f, const std::string& configured) {
  std::string command = configured;
  if (command.empty()) {
    if (const char* env = std::getenv(kExternalCommandEnv)) command = env;
  }
  if (command.empty()) {
    throw DataError(std::string("external upscaler not configured (set ") +
                    kExternalCommandEnv + " or sr_command)");
  }
  static std::atomic<int> counter{0};
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() /
                       ("msfnet_sr_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::create_directories(dir);
  const auto in_path = (dir / "in.png").string();
  const auto out_path = (dir / "out.png").string();
  image::write_png(image::to_raster(image), in_path);
  const std::string cmd = command + " " + shell_quote(in_path) + " " +
                          shell_quote(out_path) + " " + std::to_string(f);
  const int status = std::system(cmd.c_str());
  if (status != 0) {
    fs::remove_all(dir);
    throw DataError("external upscaler failed with status " +
                    std::to_string(status) + ": " + command);
  }
  image::Raster raster;
  try {
    raster = image::read_png(out_path);
  } catch (...) {
    fs::remove_all(dir);
    throw;
  }
  fs::remove_all(dir);
  const auto eh = image.dim(1) * f, ew = image.dim(2) * f;
  if (raster.height != eh || raster.width != ew) {
    throw DataError("external upscaler returned " + std::to_string(raster.width) +
                    "x" + std::to_string(raster.height) + ", expected " +
                    std::to_string(ew) + "x" + std::to_string(eh));
  }
  return image::to_tensor(raster);
}

}  // namespace

UpscaleMethod parse_method(const std::string& name) {
  if (name == "nearest") return UpscaleMethod::kNearest;
  if (name == "bilinear") return UpscaleMethod::kBilinear;
  if (name == "external") return UpscaleMethod::kExternal;
  throw DataError("unknown upscale method '" + name + "'");
}

std::string method_name(UpscaleMethod method) {
  switch (method) {
    case UpscaleMethod::kNearest: return "nearest";
    case UpscaleMethod::kBilinear: return "bilinear";
    case UpscaleMethod::kExternal: return "external";
  }
  return "?";
}

Tensor upscale(const Tensor& image, int factor, const UpscaleOptions& options) {
  check_image(image, "upscale");
  if (factor != 2 && factor != 4) {
    throw ShapeError("upscale: factor must be 2 or 4, got " +
                     std::to_string(factor));
  }
  switch (options.method) {
    case UpscaleMethod::kNearest: return upscale_nearest(image, factor);
    case UpscaleMethod::kBilinear: return upscale_bilinear(image, factor);
    case UpscaleMethod::kExternal:
      return upscale_external(image, factor, options.external_command);
  }
  throw DataError("unknown upscale method");
}

Tensor degrade(const Tensor& image, int factor, double blur_sigma) {
  check_image(image, "degrade");
  const auto h = image.dim(1), w = image.dim(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("degrade: image " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by factor " +
                     std::to_string(factor));
  }
  if (blur_sigma < 0.0) throw ShapeError("degrade: sigma must be >= 0");
  std::vector<double> buf(image.data().begin(), image.data().end());
  if (blur_sigma > 0.0) {
    const int radius = static_cast<int>(std::ceil(3.0 * blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[i + radius] = std::exp(-0.5 * i * i / (blur_sigma * blur_sigma));
      total += kernel[i + radius];
    }
    for (auto& k : kernel) k /= total;
    std::vector<double> tmp(buf.size());
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const auto xx = std::clamp<std::int64_t>(x + i, 0, w - 1);
            acc += kernel[i + radius] * buf[(c * h + y) * w + xx];
          }
          tmp[(c * h + y) * w + x] = acc;
        }
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const auto yy = std::clamp<std::int64_t>(y + i, 0, h - 1);
            acc += kernel[i + radius] * tmp[(c * h + yy) * w + x];
          }
          buf[(c * h + y) * w + x] = acc;
        }
  }
  const auto ho = h / factor, wo = w / factor;
  std::vector<double> out(static_cast<std::size_t>(3 * ho * wo), 0.0);
  const double inv = 1.0 / (factor * factor);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out[(c * ho + y / factor) * wo + x / factor] +=
            buf[(c * h + y) * w + x] * inv;
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor::from({3, ho, wo}, std::move(out));
}

ImagePair make_pair(const Tensor& original, int factor,
                    const UpscaleOptions& options, bool sr_enabled) {
  ImagePair pair;
  pair.original = original;
  pair.factor = factor;
  UpscaleOptions passthrough;
  passthrough.method = UpscaleMethod::kNearest;
  pair.super_resolved =
      upscale(original, factor, sr_enabled ? options : passthrough);
  return pair;
}

}  // namespace msf::sr
