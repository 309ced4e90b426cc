// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/run_config.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "msfnet/error.h"
#include "msfnet/srproxy.h"

namespace msf {

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ConfigError(std::string("config key '") + key + "' " + what);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void RunConfig::validate() const {
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(epochs >= 1, "epochs", "must be >= 1");
  require(max_steps >= 0, "max_steps", "must be >= 0");
  require(learning_rate > 0.0, "learning_rate", "must be > 0");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0, 1)");
  require(in_unit(conf_thresh), "conf_thresh", "must lie in [0, 1]");
  require(in_unit(nms_thresh), "nms_thresh", "must lie in [0, 1]");
  require(in_unit(candidate_thresh), "candidate_thresh", "must lie in [0, 1]");
  require(in_unit(negative_weight), "negative_weight", "must lie in [0, 1]");
  require(objectness_prior > 0.0 && objectness_prior < 1.0, "objectness_prior",
          "must lie in (0, 1)");
  require(head_init_std >= 0.0, "head_init_std", "must be >= 0");
  require(num_class >= 1, "num_class", "must be >= 1");
  require(sr_factor == 2 || sr_factor == 4, "sr_factor", "must be 2 or 4");
  require(image_width > 0 && input_width() % 32 == 0, "image_width",
          "times sr_factor must be a positive multiple of 32");
  require(image_height > 0 && input_height() % 32 == 0, "image_height",
          "times sr_factor must be a positive multiple of 32");
  try {
    sr::parse_method(sr_method);
  } catch (const DataError& e) {
    throw ConfigError(std::string("config key 'sr_method': ") + e.what());
  }
  require(word_maxlen >= 1, "word_maxlen", "must be >= 1");
  require(sent_maxlen >= 1, "sent_maxlen", "must be >= 1");
  require(bucket_count >= 1, "bucket_count", "must be >= 1");
  require(token_dim >= 1, "token_dim", "must be >= 1");
  require(heads >= 1 && token_dim % heads == 0, "heads", "must divide token_dim");
  require(layers >= 0, "layers", "must be >= 0");
  require(ffn_expansion >= 1, "ffn_expansion", "must be >= 1");
  for (int c : stem_channels) require(c >= 1, "stem_channels", "must be positive");
  for (int c : backbone_channels) require(c >= 1, "backbone_channels", "must be positive");
  require(spp_kernels.empty() || spp_kernels.size() == 3, "spp_kernels",
          "must hold 3 kernels or be empty");
  for (int k : spp_kernels) require(k >= 1 && k % 2 == 1, "spp_kernels", "must be odd");
  require(anchors.empty() || anchors.size() == 9, "anchors",
          "must hold 9 (w, h) pairs or be empty");
  for (const auto& a : anchors) require(a[0] > 0 && a[1] > 0, "anchors", "must be positive");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["conf_thresh"] = c.conf_thresh;
  j["nms_thresh"] = c.nms_thresh;
  j["candidate_thresh"] = c.candidate_thresh;
  j["num_class"] = c.num_class;
  j["image_width"] = c.image_width;
  j["image_height"] = c.image_height;
  j["sr_factor"] = c.sr_factor;
  j["sr_method"] = c.sr_method;
  j["sr_command"] = c.sr_command;
  j["text_enabled"] = c.text_enabled;
  j["sr_enabled"] = c.sr_enabled;
  j["word_maxlen"] = c.word_maxlen;
  j["sent_maxlen"] = c.sent_maxlen;
  j["bucket_count"] = c.bucket_count;
  j["token_dim"] = c.token_dim;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["ffn_expansion"] = c.ffn_expansion;
  j["positional"] = c.positional;
  j["duplicate_text"] = c.duplicate_text;
  j["stem_channels"] = c.stem_channels;
  j["backbone_channels"] = c.backbone_channels;
  j["spp_kernels"] = c.spp_kernels;
  j["anchors"] = c.anchors;
  j["objectness"] = c.objectness;
  j["negative_weight"] = c.negative_weight;
  j["objectness_prior"] = c.objectness_prior;
  j["head_init_std"] = c.head_init_std;
  if (c.bridge) {
    nlohmann::json b = *c.bridge;
    j["bridge"] = b;
  } else {
    j["bridge"] = nullptr;
  }
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto known = to_json(RunConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig c;
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "max_steps", c.max_steps);
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "dropout", c.dropout);
  read(j, "seed", c.seed);
  read(j, "conf_thresh", c.conf_thresh);
  read(j, "nms_thresh", c.nms_thresh);
  read(j, "candidate_thresh", c.candidate_thresh);
  read(j, "num_class", c.num_class);
  read(j, "image_width", c.image_width);
  read(j, "image_height", c.image_height);
  read(j, "sr_factor", c.sr_factor);
  read(j, "sr_method", c.sr_method);
  read(j, "sr_command", c.sr_command);
  read(j, "text_enabled", c.text_enabled);
  read(j, "sr_enabled", c.sr_enabled);
  read(j, "word_maxlen", c.word_maxlen);
  read(j, "sent_maxlen", c.sent_maxlen);
  read(j, "bucket_count", c.bucket_count);
  read(j, "token_dim", c.token_dim);
  read(j, "heads", c.heads);
  read(j, "layers", c.layers);
  read(j, "ffn_expansion", c.ffn_expansion);
  read(j, "positional", c.positional);
  read(j, "duplicate_text", c.duplicate_text);
  read(j, "stem_channels", c.stem_channels);
  read(j, "backbone_channels", c.backbone_channels);
  read(j, "spp_kernels", c.spp_kernels);
  read(j, "anchors", c.anchors);
  read(j, "objectness", c.objectness);
  read(j, "negative_weight", c.negative_weight);
  read(j, "objectness_prior", c.objectness_prior);
  read(j, "head_init_std", c.head_init_std);
  if (auto it = j.find("bridge"); it != j.end() && !it->is_null()) {
    try {
      c.bridge = it->get<bridge::BridgeSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config key 'bridge': ") + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_overrides(RunConfig& config,
                     const std::vector<std::pair<std::string, std::string>>& overrides) {
  if (overrides.empty()) return;
  nlohmann::json j = to_json(config);
  for (auto [key, text] : overrides) {
    std::replace(key.begin(), key.end(), '-', '_');
    if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    // String keys keep digits and literals verbatim.
    if (j[key].is_string() && !value.is_string()) value = text;
    j[key] = value;
  }
  config = config_from_json(j);
}

}  // namespace msf
