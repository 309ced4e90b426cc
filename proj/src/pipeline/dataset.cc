// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "msfnet/error.h"
#include "msfnet/image.h"

namespace msf::data {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& root, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: break;
  }
  return "all";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "all") return Split::kNone;
  throw DataError("unknown split '" + name + "'");
}

std::vector<const Sample*> Dataset::select(Split split) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (split == Split::kNone || s.record.split == split) out.push_back(&s);
  return out;
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      SampleRecord r;
      r.image = j.at("image").get<std::string>();
      r.annotations = j.at("annotations").get<std::string>();
      if (j.contains("text") && !j["text"].is_null()) r.text = j["text"].get<std::string>();
      if (j.contains("sr_image") && !j["sr_image"].is_null())
        r.sr_image = j["sr_image"].get<std::string>();
      r.width = j.at("width").get<int>();
      r.height = j.at("height").get<int>();
      if (r.width <= 0 || r.height <= 0) throw DataError("non-positive image size");
      if (j.contains("split")) r.split = parse_split(j["split"].get<std::string>());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed manifest row (" + e.what() + ")");
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

std::string format_manifest(const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json row;
    row["image"] = r.image;
    row["annotations"] = r.annotations;
    row["text"] = r.text ? nlohmann::ordered_json(*r.text) : nlohmann::ordered_json(nullptr);
    row["width"] = r.width;
    row["height"] = r.height;
    if (r.sr_image) row["sr_image"] = *r.sr_image;
    if (r.split != Split::kNone) row["split"] = split_name(r.split);
    out += row.dump() + "\n";
  }
  return out;
}

Dataset load_dataset(const fs::path& manifest) {
  Dataset ds;
  ds.root = manifest.parent_path();
  for (auto& r : read_manifest(manifest)) {
    Sample s;
    const auto image_path = resolve(ds.root, r.image);
    if (!fs::exists(image_path)) throw DataError("missing file " + image_path.string());
    const auto raster = image::read_png(image_path.string());
    if (raster.width != r.width || raster.height != r.height) {
      throw DataError(image_path.string() + ": image is " + std::to_string(raster.width) + "x" +
                      std::to_string(raster.height) + ", manifest says " +
                      std::to_string(r.width) + "x" + std::to_string(r.height));
    }
    s.image = image::to_tensor(raster);
    if (r.sr_image) {
      const auto p = resolve(ds.root, *r.sr_image);
      s.sr_image = image::to_tensor(image::read_png(p.string()));
    }
    const auto ann_path = resolve(ds.root, r.annotations);
    s.boxes = acie::parse_annotations(read_file(ann_path), ann_path.string());
    for (std::size_t i = 0; i < s.boxes.size(); ++i) {
      const auto& b = s.boxes[i];
      if (b.x1 < 0 || b.y1 < 0 || b.x2 > r.width || b.y2 > r.height || b.x2 <= b.x1 ||
          b.y2 <= b.y1) {
        throw DataError(ann_path.string() + ":" + std::to_string(i + 1) +
                        ": box outside the image");
      }
    }
    if (r.text) s.text = trim(read_file(resolve(ds.root, *r.text)));
    s.record = std::move(r);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::array<int, 3> split_counts(int n, const std::array<double, 3>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw DataError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int used = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = n * ratios[k];
    counts[k] = static_cast<int>(std::floor(exact + 1e-9));
    frac[k] = exact - counts[k];
    used += counts[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; used < n; ++k, ++used) ++counts[order[k % 3]];
  return counts;
}

std::vector<SampleRecord> split(std::vector<SampleRecord> records,
                                const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (records.empty()) throw DataError("cannot split an empty dataset");
  const int n = static_cast<int>(records.size());
  const auto counts = split_counts(n, ratios);
  std::vector<int> perm(records.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % (i + 1)]);
  for (int k = 0; k < n; ++k) {
    records[perm[k]].split = k < counts[0]               ? Split::kTrain
                             : k < counts[0] + counts[1] ? Split::kVal
                                                         : Split::kTest;
  }
  return records;
}

}  // namespace msf::data
