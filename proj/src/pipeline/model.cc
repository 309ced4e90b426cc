// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/model.h"

#include <algorithm>

#include "msfnet/error.h"
#include "msfnet/ops.h"
#include "msfnet/srproxy.h"

namespace msf {

namespace {

constexpr std::uint64_t kEmbeddingSalt = 0x5bd1e9955bd1e995ULL;

BackboneConfig backbone_config(const RunConfig& c) {
  BackboneConfig b;
  b.stem_channels = c.stem_channels;
  b.channels = c.backbone_channels;
  return b;
}

fusion::EncoderConfig encoder_config(const RunConfig& c) {
  fusion::EncoderConfig e;
  e.dim = c.token_dim;
  e.heads = c.heads;
  e.layers = c.layers;
  e.ffn_expansion = c.ffn_expansion;
  e.dropout = c.dropout;
  e.positional = c.positional;
  e.duplicate_text = c.duplicate_text;
  return e;
}

detect::DetectConfig detect_config(const RunConfig& c) {
  detect::DetectConfig d;
  d.num_class = c.num_class;
  std::copy_n(c.spp_kernels.begin(), 3, d.spp_kernels.begin());
  d.objectness = c.objectness;
  d.negative_weight = c.negative_weight;
  d.objectness_prior = c.objectness_prior;
  d.head_init_std = c.head_init_std;
  return d;
}

detect::AnchorSet anchor_set(const RunConfig& c) {
  detect::AnchorSet a;
  for (int j = 0; j < 9; ++j) a.wh[j] = c.anchors[static_cast<std::size_t>(j)];
  a.validate();
  return a;
}

text::TokenizerOptions tokenizer_options(const RunConfig& c) {
  text::TokenizerOptions t;
  t.word_maxlen = c.word_maxlen;
  t.sent_maxlen = c.sent_maxlen;
  t.bucket_count = c.bucket_count;
  return t;
}

}  // namespace

RunConfig resolved_config(const RunConfig& config) {
  RunConfig c = config;
  c.validate();
  std::array<bridge::LevelDims, 3> levels;
  for (int i = 0; i < 3; ++i) {
    levels[i] = {c.backbone_channels[i], c.input_height() / kPyramidStrides[i],
                 c.input_width() / kPyramidStrides[i]};
  }
  if (!c.bridge) {
    try {
      c.bridge = bridge::default_bridge_spec(c.token_dim, levels);
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("config key 'bridge': no preset fits (") + e.what() +
                        "); supply a bridge spec");
    }
  }
  if (c.spp_kernels.empty()) {
    const int coarse = std::min(levels[0].height, levels[0].width);
    c.spp_kernels = coarse >= 6 ? std::vector<int>{5, 9, 13}
                                : std::vector<int>(detect::kToySppKernels.begin(),
                                                   detect::kToySppKernels.end());
  }
  if (c.anchors.empty()) {
    const auto d = detect::AnchorSet::defaults(c.input_width(), c.input_height());
    c.anchors.assign(d.wh.begin(), d.wh.end());
  }
  return c;
}

Model::Model(const RunConfig& config)
    : config_(resolved_config(config)),
      tokenizer_(tokenizer_options(config_)),
      anchors_(anchor_set(config_)),
      init_(config_.seed),
      embedding(config_.bucket_count, config_.token_dim, config_.seed ^ kEmbeddingSalt),
      backbone(backbone_config(config_), init_),
      converter(*config_.bridge, init_),
      fusion(encoder_config(config_), init_),
      detector(config_.backbone_channels, detect_config(config_), init_) {}

PreparedSample Model::prepare(const data::Sample& sample) const {
  const int f = config_.sr_factor;
  if (sample.image.dim(2) != config_.image_width || sample.image.dim(1) != config_.image_height) {
    throw DataError(sample.record.image + ": image is " + std::to_string(sample.image.dim(2)) +
                    "x" + std::to_string(sample.image.dim(1)) + ", model expects " +
                    std::to_string(config_.image_width) + "x" +
                    std::to_string(config_.image_height));
  }
  PreparedSample p;
  sr::UpscaleOptions nearest;
  nearest.method = sr::UpscaleMethod::kNearest;
  p.lr_input = sr::upscale(sample.image, f, nearest);
  if (config_.sr_enabled && sample.sr_image.defined()) {
    if (sample.sr_image.dim(1) != config_.input_height() ||
        sample.sr_image.dim(2) != config_.input_width()) {
      throw DataError(sample.record.sr_image.value_or("sr image") + ": expected " +
                      std::to_string(config_.input_width()) + "x" +
                      std::to_string(config_.input_height()));
    }
    p.sr_input = sample.sr_image;
  } else {
    sr::UpscaleOptions options;
    options.method = sr::parse_method(config_.sr_method);
    options.external_command = config_.sr_command;
    p.sr_input = sr::make_pair(sample.image, f, options, config_.sr_enabled).super_resolved;
  }
  if (config_.text_enabled && sample.text && !sample.text->empty()) {
    p.tokens = text::tokenize(*sample.text, tokenizer_);
  }
  for (const auto& b : sample.boxes) {
    if (b.class_id < 0 || b.class_id >= config_.num_class) {
      throw DataError(sample.record.annotations + ": class " + std::to_string(b.class_id) +
                      " outside the model's " + std::to_string(config_.num_class) +
                      " classes");
    }
    const Box box{static_cast<double>(b.x1), static_cast<double>(b.y1),
                  static_cast<double>(b.x2), static_cast<double>(b.y2)};
    p.original_truths.push_back({box, b.class_id});
    p.truths.push_back({{box.x1 * f, box.y1 * f, box.x2 * f, box.y2 * f}, b.class_id});
  }
  return p;
}

Model::Output Model::forward(const PreparedSample& s, bool training,
                             std::uint64_t dropout_seed) const {
  const auto lr = fusion.project_in(converter.tic_forward(backbone.forward(s.lr_input)));
  const auto sr = fusion.project_in(converter.tic_forward(backbone.forward(s.sr_input)));
  Tensor text;
  if (config_.text_enabled && !s.tokens.empty()) text = text::embed(s.tokens, embedding);
  const auto seq = fusion::build_sequence(text, lr, sr, config_.duplicate_text);
  const auto maps = converter.itc_forward(fusion.forward(seq, training, dropout_seed));
  return {detector.forward(maps), seq.layout};
}

detect::LossTerms Model::loss(const Output& out, const PreparedSample& s) const {
  const int w = config_.input_width(), h = config_.input_height();
  const auto grids = detect::grid_sizes(out.raw);
  const auto assignment = detect::assign(s.truths, anchors_, grids, w, h);
  return detect::loss(out.raw, s.truths, assignment, anchors_, detector.config(), w, h);
}

std::vector<Detection> Model::predict(const PreparedSample& s, double conf_thresh) const {
  const auto out = forward(s, false, 0);
  auto dets = detect::decode(out.raw, anchors_, config_.num_class, conf_thresh,
                             config_.input_width(), config_.input_height(), config_.objectness);
  dets = detect::nms(std::move(dets), config_.nms_thresh);
  const double inv = 1.0 / config_.sr_factor;
  for (auto& d : dets) d.box = {d.box.x1 * inv, d.box.y1 * inv, d.box.x2 * inv, d.box.y2 * inv};
  return dets;
}

nn::NamedParams Model::parameters() const {
  nn::NamedParams out;
  out.emplace_back("text.embedding", embedding.weights());
  backbone.collect(out, "backbone");
  converter.collect(out, "bridge");
  fusion.collect(out, "fusion");
  detector.collect(out, "detect");
  return out;
}

}  // namespace msf
