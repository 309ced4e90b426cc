// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_BRIDGE_H_
#define MSFNET_BRIDGE_H_

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msfnet/backbone.h"
#include "msfnet/layers.h"

// TIC turns each pyramid level into a grid x grid x T map read out as
// grid^2 tokens; ITC maps fused tokens back to the pyramid's shapes.
namespace msf::bridge {

enum class LayerKind { kConv, kConvTranspose, kMaxPool, kAdaptiveMaxPool, kUpsample };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int kernel = 1;
  int padding = 0;
  int stride = 1;
  /// Transposed convs only; solved by resolve(), any stored value is ignored.
  int output_padding = 0;
  /// Adaptive pooling only.
  int target = 0;
  bool allow_overlap = false;
  /// Upsampling only.
  int factor = 2;

  static LayerSpec conv(int k, int p, int s);
  static LayerSpec conv_transpose(int k, int p, int s);
  static LayerSpec max_pool(int k, int s, int p = 0);
  static LayerSpec adaptive_pool(int target, bool allow_overlap = false);
  static LayerSpec upsample(int factor);
};

struct LevelDims {
  int channels = 0;
  int height = 0;
  int width = 0;
};

struct BridgeSpec {
  int token_dim = 32;
  int grid = 5;
  /// Input pyramid dims; index 0 is the coarsest level.
  std::array<LevelDims, 3> levels;
  std::array<std::vector<LayerSpec>, 3> tic;
  std::array<std::vector<LayerSpec>, 3> itc;
};

/// Full-size structure for a 19/38/76 pyramid; every TIC
/// branch ends in an adaptive pool to 5x5.
BridgeSpec full_bridge_spec(int token_dim, std::array<int, 3> channels);
/// Desk-scale structure for a 3/6/12 pyramid.
BridgeSpec toy_bridge_spec(int token_dim, std::array<int, 3> channels);
/// Picks the full-size or toy structure from the pyramid size and throws when
/// neither applies.
BridgeSpec default_bridge_spec(int token_dim, std::array<LevelDims, 3> levels);

/// Validates every chain and solves transposed-conv output padding so each
/// ITC branch lands exactly on its level's spatial dims. Throws ShapeError
/// naming the branch and layer on failure.
void resolve(BridgeSpec& spec);

/// Spatial (h, w) after each layer of a chain, starting from (h, w).
std::vector<std::pair<int, int>> shape_chain(const std::vector<LayerSpec>& layers,
                                             int h, int w);

void to_json(nlohmann::json& j, const BridgeSpec& spec);
void from_json(const nlohmann::json& j, BridgeSpec& spec);

/// Per-level token blocks, each [grid^2 x T], row-major over the grid.
using VisualTokens = std::array<Tensor, 3>;

class Bridge {
 public:
  /// `spec` is resolved on construction.
  Bridge(BridgeSpec spec, nn::Initializer& init);

  VisualTokens tic_forward(const ScalePyramid& p) const;
  ScalePyramid itc_forward(const VisualTokens& tokens) const;

  const BridgeSpec& spec() const { return spec_; }
  void collect(nn::NamedParams& out, const std::string& prefix) const;

 private:
  struct Stage {
    LayerSpec spec;
    nn::Conv2d conv;
    nn::ConvTranspose2d conv_t;
  };
  Tensor run(const std::vector<Stage>& stages, Tensor x) const;

  BridgeSpec spec_;
  std::array<std::vector<Stage>, 3> tic_;
  std::array<std::vector<Stage>, 3> itc_;
};

}  // namespace msf::bridge

#endif  // MSFNET_BRIDGE_H_
