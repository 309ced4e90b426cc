// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/bridge.h"

#include <string>

#include "msfnet/error.h"
#include "msfnet/ops.h"

namespace msf::bridge {

LayerSpec LayerSpec::conv(int k, int p, int s) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.kernel = k;
  l.padding = p;
  l.stride = s;
  return l;
}

LayerSpec LayerSpec::conv_transpose(int k, int p, int s) {
  LayerSpec l = conv(k, p, s);
  l.kind = LayerKind::kConvTranspose;
  return l;
}

LayerSpec LayerSpec::max_pool(int k, int s, int p) {
  LayerSpec l = conv(k, p, s);
  l.kind = LayerKind::kMaxPool;
  return l;
}

LayerSpec LayerSpec::adaptive_pool(int target, bool allow_overlap) {
  LayerSpec l;
  l.kind = LayerKind::kAdaptiveMaxPool;
  l.target = target;
  l.allow_overlap = allow_overlap;
  return l;
}

LayerSpec LayerSpec::upsample(int factor) {
  LayerSpec l;
  l.kind = LayerKind::kUpsample;
  l.factor = factor;
  return l;
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kConvTranspose: return "conv_transpose";
    case LayerKind::kMaxPool: return "max_pool";
    case LayerKind::kAdaptiveMaxPool: return "adaptive_max_pool";
    case LayerKind::kUpsample: return "upsample";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  for (auto k : {LayerKind::kConv, LayerKind::kConvTranspose, LayerKind::kMaxPool,
                 LayerKind::kAdaptiveMaxPool, LayerKind::kUpsample}) {
    if (s == kind_name(k)) return k;
  }
  throw DataError("bridge spec: unknown layer type '" + s + "'");
}

bool has_weights(const LayerSpec& l) {
  return l.kind == LayerKind::kConv || l.kind == LayerKind::kConvTranspose;
}

int step(const LayerSpec& l, int in) {
  switch (l.kind) {
    case LayerKind::kConv:
      return static_cast<int>(ops::conv_output_extent(in, l.kernel, l.padding, l.stride));
    case LayerKind::kConvTranspose:
      return static_cast<int>(ops::conv_transpose_output_extent(
          in, l.kernel, l.padding, l.stride, l.output_padding));
    case LayerKind::kMaxPool:
      return static_cast<int>(ops::pool_output_extent(in, l.kernel, l.stride, l.padding));
    case LayerKind::kAdaptiveMaxPool:
      if (l.target <= 0) throw ShapeError("adaptive pool target must be positive");
      if (l.target > in && !l.allow_overlap) {
        throw ShapeError("adaptive pool target " + std::to_string(l.target) +
                         " exceeds input " + std::to_string(in));
      }
      return l.target;
    case LayerKind::kUpsample:
      if (l.factor < 1) throw ShapeError("upsample factor must be >= 1");
      return in * l.factor;
  }
  return in;
}

std::string where(const char* branch, int level, std::size_t layer) {
  return std::string(branch) + std::to_string(level + 1) + " layer " +
         std::to_string(layer);
}

// Input extent a layer needs in order to produce `out`, fixing output
// padding on transposed convs. Returns -1 when no input works.
int required_input(LayerSpec& l, int out) {
  switch (l.kind) {
    case LayerKind::kConvTranspose: {
      const int need = out + 2 * l.padding - l.kernel;
      if (need < 0) return -1;
      l.output_padding = need % l.stride;
      return (need - l.output_padding) / l.stride + 1;
    }
    case LayerKind::kUpsample:
      return out % l.factor == 0 ? out / l.factor : -1;
    case LayerKind::kConv:
    case LayerKind::kMaxPool:
      return (out - 1) * l.stride - 2 * l.padding + l.kernel;
    case LayerKind::kAdaptiveMaxPool:
      return l.target == out ? out : -1;
  }
  return -1;
}

}  // namespace

std::vector<std::pair<int, int>> shape_chain(const std::vector<LayerSpec>& layers,
                                             int h, int w) {
  std::vector<std::pair<int, int>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    h = step(l, h);
    w = step(l, w);
    out.emplace_back(h, w);
  }
  return out;
}

void resolve(BridgeSpec& spec) {
  if (spec.token_dim <= 0 || spec.grid <= 0) {
    throw ShapeError("bridge spec: token_dim and grid must be positive");
  }
  for (int i = 0; i < 3; ++i) {
    const auto& d = spec.levels[i];
    if (d.channels <= 0 || d.height <= 0 || d.width <= 0) {
      throw ShapeError("bridge spec: level " + std::to_string(i + 1) +
                       " dims must be positive");
    }
    auto& tic = spec.tic[i];
    if (std::none_of(tic.begin(), tic.end(), has_weights)) {
      throw ShapeError("bridge spec: B" + std::to_string(i + 1) +
                       " needs a conv layer");
    }
    int h = d.height, w = d.width;
    for (std::size_t k = 0; k < tic.size(); ++k) {
      try {
        h = step(tic[k], h);
        w = step(tic[k], w);
      } catch (const ShapeError& e) {
        throw ShapeError("bridge spec: " + where("B", i, k) + ": " + e.what());
      }
    }
    if (h != spec.grid || w != spec.grid) {
      throw ShapeError("bridge spec: B" + std::to_string(i + 1) + " ends at " +
                       std::to_string(h) + "x" + std::to_string(w) + ", expected " +
                       std::to_string(spec.grid) + "x" + std::to_string(spec.grid));
    }

    auto& itc = spec.itc[i];
    if (std::none_of(itc.begin(), itc.end(), has_weights)) {
      throw ShapeError("bridge spec: C" + std::to_string(i + 1) +
                       " needs a conv or conv_transpose layer");
    }
    // Solve output padding from the target backwards, per axis.
    for (std::size_t k = itc.size(); k-- > 0;) {
      if (itc[k].kind != LayerKind::kConvTranspose) continue;
      if (itc[k].stride <= 0 || itc[k].kernel <= 0 || itc[k].padding < 0) {
        throw ShapeError("bridge spec: " + where("C", i, k) + ": bad parameters");
      }
    }
    auto solve_axis = [&](int target, std::vector<int>& pads) {
      int need = target;
      pads.assign(itc.size(), 0);
      for (std::size_t k = itc.size(); k-- > 0;) {
        LayerSpec l = itc[k];
        need = required_input(l, need);
        if (need <= 0) return false;
        pads[k] = l.output_padding;
      }
      return need == spec.grid;
    };
    std::vector<int> pad_h, pad_w;
    const bool ok_h = solve_axis(d.height, pad_h);
    const bool ok_w = solve_axis(d.width, pad_w);
    if (!ok_h || !ok_w || pad_h != pad_w) {
      throw ShapeError("bridge spec: C" + std::to_string(i + 1) + " cannot map " +
                       std::to_string(spec.grid) + "x" + std::to_string(spec.grid) +
                       " to " + std::to_string(d.height) + "x" +
                       std::to_string(d.width));
    }
    for (std::size_t k = 0; k < itc.size(); ++k) {
      if (itc[k].kind == LayerKind::kConvTranspose) itc[k].output_padding = pad_h[k];
    }
    const auto chain = shape_chain(itc, spec.grid, spec.grid);
    if (chain.back() != std::make_pair(d.height, d.width)) {
      throw ShapeError("bridge spec: C" + std::to_string(i + 1) +
                       " does not restore the level dims");
    }
  }
}

BridgeSpec full_bridge_spec(int token_dim, std::array<int, 3> channels) {
  using L = LayerSpec;
  BridgeSpec s;
  s.token_dim = token_dim;
  s.grid = 5;
  s.levels = {LevelDims{channels[0], 19, 19}, LevelDims{channels[1], 38, 38},
              LevelDims{channels[2], 76, 76}};
  s.tic[0] = {L::conv(3, 1, 2), L::adaptive_pool(5)};
  s.tic[1] = {L::conv(3, 1, 2), L::conv(3, 1, 2), L::adaptive_pool(5)};
  s.tic[2] = {L::conv(5, 2, 4), L::conv(3, 1, 2), L::adaptive_pool(5)};
  s.itc[0] = {L::upsample(2), L::conv_transpose(3, 1, 2)};
  s.itc[1] = {L::upsample(2), L::conv_transpose(3, 1, 2), L::conv_transpose(3, 1, 2)};
  s.itc[2] = {L::upsample(2), L::conv_transpose(3, 1, 2), L::conv_transpose(5, 2, 4)};
  resolve(s);
  return s;
}

BridgeSpec toy_bridge_spec(int token_dim, std::array<int, 3> channels) {
  using L = LayerSpec;
  BridgeSpec s;
  s.token_dim = token_dim;
  s.grid = 5;
  s.levels = {LevelDims{channels[0], 3, 3}, LevelDims{channels[1], 6, 6},
              LevelDims{channels[2], 12, 12}};
  s.tic[0] = {L::conv(3, 1, 1), L::adaptive_pool(5, true)};
  s.tic[1] = {L::conv(3, 1, 1), L::adaptive_pool(5)};
  s.tic[2] = {L::conv(3, 1, 2), L::adaptive_pool(5)};
  s.itc[0] = {L::conv_transpose(3, 2, 1)};
  s.itc[1] = {L::conv_transpose(2, 0, 1)};
  s.itc[2] = {L::upsample(2), L::conv_transpose(3, 0, 1)};
  resolve(s);
  return s;
}

BridgeSpec default_bridge_spec(int token_dim, std::array<LevelDims, 3> levels) {
  const std::array<int, 3> ch = {levels[0].channels, levels[1].channels,
                                 levels[2].channels};
  auto square = [&](int a, int b, int c) {
    return levels[0].height == a && levels[0].width == a && levels[1].height == b &&
           levels[1].width == b && levels[2].height == c && levels[2].width == c;
  };
  if (square(19, 38, 76)) return full_bridge_spec(token_dim, ch);
  if (square(3, 6, 12)) return toy_bridge_spec(token_dim, ch);
  throw ShapeError("no default bridge structure for pyramid " +
                   std::to_string(levels[0].height) + "/" +
                   std::to_string(levels[1].height) + "/" +
                   std::to_string(levels[2].height) +
                   "; supply one in the run config");
}

void to_json(nlohmann::json& j, const BridgeSpec& spec) {
  auto layer = [](const LayerSpec& l) {
    nlohmann::json o{{"type", kind_name(l.kind)}};
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kMaxPool:
        o["kernel"] = l.kernel;
        o["padding"] = l.padding;
        o["stride"] = l.stride;
        break;
      case LayerKind::kConvTranspose:
        o["kernel"] = l.kernel;
        o["padding"] = l.padding;
        o["stride"] = l.stride;
        o["output_padding"] = l.output_padding;
        break;
      case LayerKind::kAdaptiveMaxPool:
        o["target"] = l.target;
        o["allow_overlap"] = l.allow_overlap;
        break;
      case LayerKind::kUpsample:
        o["factor"] = l.factor;
        break;
    }
    return o;
  };
  j = nlohmann::json::object();
  j["token_dim"] = spec.token_dim;
  j["grid"] = spec.grid;
  j["levels"] = nlohmann::json::array();
  for (const auto& d : spec.levels) j["levels"].push_back({d.channels, d.height, d.width});
  for (const char* key : {"tic", "itc"}) {
    const auto& branches = std::string(key) == "tic" ? spec.tic : spec.itc;
    auto& arr = j[key] = nlohmann::json::array();
    for (const auto& b : branches) {
      auto list = nlohmann::json::array();
      for (const auto& l : b) list.push_back(layer(l));
      arr.push_back(list);
    }
  }
}

void from_json(const nlohmann::json& j, BridgeSpec& spec) {
  try {
    spec.token_dim = j.at("token_dim").get<int>();
    spec.grid = j.value("grid", 5);
    const auto& levels = j.at("levels");
    if (levels.size() != 3) throw DataError("bridge spec: need 3 levels");
    for (std::size_t i = 0; i < 3; ++i) {
      spec.levels[i] = LevelDims{levels[i].at(0).get<int>(), levels[i].at(1).get<int>(),
                                 levels[i].at(2).get<int>()};
    }
    for (const char* key : {"tic", "itc"}) {
      auto& branches = std::string(key) == "tic" ? spec.tic : spec.itc;
      const auto& arr = j.at(key);
      if (arr.size() != 3) throw DataError(std::string("bridge spec: need 3 ") + key + " branches");
      for (std::size_t i = 0; i < 3; ++i) {
        branches[i].clear();
        for (const auto& o : arr[i]) {
          LayerSpec l;
          l.kind = parse_kind(o.at("type").get<std::string>());
          l.kernel = o.value("kernel", 1);
          l.padding = o.value("padding", 0);
          l.stride = o.value("stride", 1);
          l.output_padding = o.value("output_padding", 0);
          l.target = o.value("target", 0);
          l.allow_overlap = o.value("allow_overlap", false);
          l.factor = o.value("factor", 2);
          branches[i].push_back(l);
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bridge spec: ") + e.what());
  }
}

Bridge::Bridge(BridgeSpec spec, nn::Initializer& init) : spec_(std::move(spec)) {
  resolve(spec_);
  const int t = spec_.token_dim;
  for (int i = 0; i < 3; ++i) {
    int in = spec_.levels[i].channels;
    for (const auto& l : spec_.tic[i]) {
      Stage st{l, {}, {}};
      if (l.kind == LayerKind::kConv) {
        st.conv = nn::Conv2d(in, t, l.kernel, l.stride, l.padding, init);
        in = t;
      }
      tic_[i].push_back(std::move(st));
    }
    const auto& itc = spec_.itc[i];
    std::size_t last = 0;
    for (std::size_t k = 0; k < itc.size(); ++k) {
      if (has_weights(itc[k])) last = k;
    }
    in = t;
    for (std::size_t k = 0; k < itc.size(); ++k) {
      const auto& l = itc[k];
      const int out = k == last ? spec_.levels[i].channels : t;
      Stage st{l, {}, {}};
      if (l.kind == LayerKind::kConv) {
        st.conv = nn::Conv2d(in, out, l.kernel, l.stride, l.padding, init);
        in = out;
      } else if (l.kind == LayerKind::kConvTranspose) {
        st.conv_t = nn::ConvTranspose2d(in, out, l.kernel, l.stride, l.padding,
                                        l.output_padding, init);
        in = out;
      }
      itc_[i].push_back(std::move(st));
    }
  }
}

Tensor Bridge::run(const std::vector<Stage>& stages, Tensor x) const {
  for (const auto& st : stages) {
    const auto& l = st.spec;
    switch (l.kind) {
      case LayerKind::kConv:
        x = ops::relu(st.conv.forward(x));
        break;
      case LayerKind::kConvTranspose:
        x = ops::relu(st.conv_t.forward(x));
        break;
      case LayerKind::kMaxPool:
        x = ops::maxpool2d(x, l.kernel, l.stride, l.padding);
        break;
      case LayerKind::kAdaptiveMaxPool:
        x = ops::adaptive_maxpool2d(x, l.target, l.target,
                                    l.allow_overlap ? ops::AdaptiveWindows::kAllowOverlap
                                                    : ops::AdaptiveWindows::kStrict);
        break;
      case LayerKind::kUpsample:
        x = ops::upsample_nearest(x, l.factor);
        break;
    }
  }
  return x;
}

VisualTokens Bridge::tic_forward(const ScalePyramid& p) const {
  VisualTokens out;
  const int g = spec_.grid;
  for (int i = 0; i < 3; ++i) {
    const auto& d = spec_.levels[i];
    const Shape want{d.channels, d.height, d.width};
    if (!p[i].defined() || p[i].shape() != want) {
      throw ShapeError("tic: level " + std::to_string(i + 1) + " expected " +
                       shape_string(want) + ", got " +
                       (p[i].defined() ? shape_string(p[i].shape()) : "undefined"));
    }
    auto map = run(tic_[i], p[i]);
    out[i] = ops::transpose(ops::reshape(map, {spec_.token_dim, g * g}));
  }
  return out;
}

ScalePyramid Bridge::itc_forward(const VisualTokens& tokens) const {
  ScalePyramid out;
  const int g = spec_.grid;
  for (int i = 0; i < 3; ++i) {
    const Shape want{g * g, spec_.token_dim};
    if (!tokens[i].defined() || tokens[i].shape() != want) {
      throw ShapeError("itc: block " + std::to_string(i + 1) + " expected " +
                       shape_string(want) + ", got " +
                       (tokens[i].defined() ? shape_string(tokens[i].shape())
                                            : "undefined"));
    }
    auto map = ops::reshape(ops::transpose(tokens[i]), {spec_.token_dim, g, g});
    out[i] = run(itc_[i], map);
  }
  return out;
}

void Bridge::collect(nn::NamedParams& out, const std::string& prefix) const {
  for (int i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < tic_[i].size(); ++k) {
      if (tic_[i][k].spec.kind == LayerKind::kConv) {
        tic_[i][k].conv.collect(out, prefix + ".tic" + std::to_string(i + 1) + "." +
                                         std::to_string(k));
      }
    }
    for (std::size_t k = 0; k < itc_[i].size(); ++k) {
      const auto name = prefix + ".itc" + std::to_string(i + 1) + "." + std::to_string(k);
      if (itc_[i][k].spec.kind == LayerKind::kConv) itc_[i][k].conv.collect(out, name);
      if (itc_[i][k].spec.kind == LayerKind::kConvTranspose) {
        itc_[i][k].conv_t.collect(out, name);
      }
    }
  }
}

}  // namespace msf::bridge
