// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/acie.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace msf::acie {

namespace fs = std::filesystem;

bool rect_overlap(const BoxAnnotation& a, const BoxAnnotation& b) {
  return std::min(a.x2, b.x2) > std::max(a.x1, b.x1) &&
         std::min(a.y2, b.y2) > std::max(a.y1, b.y1);
}

TargetCrop make_crop(image::Raster raster, int class_id) {
  int x0 = raster.width, y0 = raster.height, x1 = -1, y1 = -1;
  for (int y = 0; y < raster.height; ++y)
    for (int x = 0; x < raster.width; ++x) {
      if (raster.channels == 4 && raster.at(x, y, 3) == 0) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  if (x1 < 0) throw DataError("target crop for class " + std::to_string(class_id) +
                              " has no opaque pixels");
  TargetCrop c;
  c.image = std::move(raster);
  c.class_id = class_id;
  c.tight_x = x0;
  c.tight_y = y0;
  c.tight_w = x1 - x0 + 1;
  c.tight_h = y1 - y0 + 1;
  return c;
}

BoxAnnotation place_target(int bg_width, int bg_height, int tight_w, int tight_h,
                           int class_id, const std::vector<BoxAnnotation>& existing,
                           std::mt19937_64& rng, int max_retries) {
  if (tight_w <= 0 || tight_h <= 0 || tight_w > bg_width || tight_h > bg_height) {
    throw PlacementError("target " + std::to_string(tight_w) + "x" +
                         std::to_string(tight_h) + " does not fit a " +
                         std::to_string(bg_width) + "x" + std::to_string(bg_height) +
                         " background");
  }
  std::uniform_int_distribution<int> ux(0, bg_width - tight_w), uy(0, bg_height - tight_h);
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    const int x = ux(rng), y = uy(rng);
    BoxAnnotation b{x, y, x + tight_w, y + tight_h, class_id};
    if (std::none_of(existing.begin(), existing.end(),
                     [&](const BoxAnnotation& e) { return rect_overlap(b, e); })) {
      return b;
    }
  }
  throw PlacementError("placement failed after " + std::to_string(max_retries) +
                       " attempts");
}

void AcieConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw DataError(std::string("acie: ") + name + " must be positive");
  };
  if (background_pool < 0) throw DataError("acie: background pool size must be >= 0");
  if (target_pool < 0) throw DataError("acie: target pool size must be >= 0");
  positive(per_image, "per-image target count");
  positive(count, "image count");
  positive(max_retries, "max retries");
  positive(max_rerolls, "max re-rolls");
  if (threads < 0) throw DataError("acie: thread count must be >= 0");
}

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

int used(int configured, std::size_t available) {
  return configured > 0 ? configured : static_cast<int>(available);
}

struct Placed {
  const TargetCrop* crop;
  int w, h;
  BoxAnnotation box;
};

}  // namespace

Pools load_pools(const fs::path& backgrounds_dir, const fs::path& targets_dir) {
  Pools pools;
  for (const auto& p : sorted_pngs(backgrounds_dir)) pools.backgrounds.push_back(image::read_png(p.string()));
  if (!fs::is_directory(targets_dir)) throw DataError("not a directory: " + targets_dir.string());
  std::vector<std::pair<int, fs::path>> classes;
  for (const auto& e : fs::directory_iterator(targets_dir)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    int id = -1;
    try {
      std::size_t used_chars = 0;
      id = std::stoi(name, &used_chars);
      if (used_chars != name.size()) id = -1;
    } catch (const std::exception&) {
    }
    if (id < 0) throw DataError("target directory name is not a class id: " + e.path().string());
    classes.emplace_back(id, e.path());
  }
  std::sort(classes.begin(), classes.end());
  for (const auto& [id, dir] : classes) {
    for (const auto& p : sorted_pngs(dir)) {
      pools.targets.push_back(make_crop(image::read_png(p.string()), id));
    }
    const auto desc = dir / "description.txt";
    if (fs::exists(desc)) {
      auto text = trim(read_file(desc));
      if (!text.empty()) pools.descriptions[id] = text;
    }
  }
  if (pools.backgrounds.empty()) throw DataError("no backgrounds in " + backgrounds_dir.string());
  if (pools.targets.empty()) throw DataError("no targets in " + targets_dir.string());
  return pools;
}

void check_pools(const AcieConfig& config, const Pools& pools) {
  config.validate();
  if (pools.backgrounds.empty() || pools.targets.empty()) {
    throw DataError("acie: background and target pools must be non-empty");
  }
  if (static_cast<std::size_t>(config.background_pool) > pools.backgrounds.size()) {
    throw DataError("acie: background pool size " + std::to_string(config.background_pool) +
                    " exceeds the " + std::to_string(pools.backgrounds.size()) +
                    " backgrounds available");
  }
  if (static_cast<std::size_t>(config.target_pool) > pools.targets.size()) {
    throw DataError("acie: target pool size " + std::to_string(config.target_pool) +
                    " exceeds the " + std::to_string(pools.targets.size()) +
                    " targets available");
  }
}

std::uint64_t image_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Composite compose(const AcieConfig& config, const Pools& pools, std::uint64_t index) {
  const int nb = used(config.background_pool, pools.backgrounds.size());
  const int nt = used(config.target_pool, pools.targets.size());
  std::mt19937_64 rng(image_seed(config.seed, index));
  std::uniform_int_distribution<int> pick_bg(0, nb - 1), pick_t(0, nt - 1);
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  for (int roll = 0; roll < config.max_rerolls; ++roll) {
    const auto& bg = pools.backgrounds[static_cast<std::size_t>(pick_bg(rng))];
    std::vector<Placed> placed;
    std::vector<BoxAnnotation> boxes;
    bool ok = true;
    for (int r = 0; r < config.per_image; ++r) {
      const auto& crop = pools.targets[static_cast<std::size_t>(pick_t(rng))];
      int w = crop.tight_w, h = crop.tight_h;
      if (config.scale_jitter) {
        const double s = jitter(rng);
        w = std::max(1, static_cast<int>(std::lround(w * s)));
        h = std::max(1, static_cast<int>(std::lround(h * s)));
      }
      try {
        auto b = place_target(bg.width, bg.height, w, h, crop.class_id, boxes, rng,
                              config.max_retries);
        boxes.push_back(b);
        placed.push_back({&crop, w, h, b});
      } catch (const PlacementError&) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    Composite out;
    out.image = image::Raster(bg.width, bg.height, 3);
    for (int y = 0; y < bg.height; ++y)
      for (int x = 0; x < bg.width; ++x)
        for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = bg.at(x, y, c);
    for (const auto& p : placed) {
      const auto& src = p.crop->image;
      for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) {
          const int sx = p.crop->tight_x + x * p.crop->tight_w / p.w;
          const int sy = p.crop->tight_y + y * p.crop->tight_h / p.h;
          const int a = src.channels == 4 ? src.at(sx, sy, 3) : 255;
          for (int c = 0; c < 3; ++c) {
            auto& dst = out.image.at(p.box.x1 + x, p.box.y1 + y, c);
            dst = static_cast<std::uint8_t>((src.at(sx, sy, c) * a + dst * (255 - a) + 127) / 255);
          }
        }
    }
    out.boxes = boxes;
    std::vector<int> seen;
    std::string caption;
    for (const auto& b : boxes) {
      if (std::find(seen.begin(), seen.end(), b.class_id) != seen.end()) continue;
      seen.push_back(b.class_id);
      auto it = pools.descriptions.find(b.class_id);
      if (it == pools.descriptions.end()) continue;
      if (!caption.empty()) caption += ' ';
      caption += it->second;
    }
    if (!caption.empty()) out.caption = caption;
    return out;
  }
  throw PlacementError("image " + std::to_string(index) + ": placement failed after " +
                       std::to_string(config.max_rerolls) + " re-rolls of " +
                       std::to_string(config.max_retries) + " attempts each");
}

std::string format_annotations(const std::vector<BoxAnnotation>& boxes) {
  std::string s;
  for (const auto& b : boxes) {
    s += std::to_string(b.class_id) + ' ' + std::to_string(b.x1) + ' ' + std::to_string(b.y1) +
         ' ' + std::to_string(b.x2) + ' ' + std::to_string(b.y2) + '\n';
  }
  return s;
}

std::vector<BoxAnnotation> parse_annotations(const std::string& text, const std::string& source) {
  std::vector<BoxAnnotation> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    BoxAnnotation b;
    std::string extra;
    if (!(ls >> b.class_id >> b.x1 >> b.y1 >> b.x2 >> b.y2) || (ls >> extra) ||
        b.class_id < 0 || b.x1 >= b.x2 || b.y1 >= b.y2 || b.x1 < 0 || b.y1 < 0) {
      throw DataError(source + ":" + std::to_string(number) + ": malformed annotation '" +
                      trim(line) + "'");
    }
    out.push_back(b);
  }
  return out;
}

GenerateSummary generate(const AcieConfig& config, const Pools& pools, const fs::path& out_dir) {
  check_pools(config, pools);
  fs::create_directories(out_dir);
  const int n = config.count;
  std::vector<std::string> rows(static_cast<std::size_t>(n));
  std::vector<int> box_counts(static_cast<std::size_t>(n), 0);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (;;) {
      const int i = next++;
      if (i >= n) return;
      try {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "acie_%06d", i);
        const std::string s = stem;
        auto comp = compose(config, pools, static_cast<std::uint64_t>(i));
        image::write_png(comp.image, (out_dir / (s + ".png")).string());
        write_file(out_dir / (s + ".txt"), format_annotations(comp.boxes));
        nlohmann::ordered_json row;
        row["image"] = s + ".png";
        row["annotations"] = s + ".txt";
        if (comp.caption) {
          write_file(out_dir / (s + ".caption.txt"), *comp.caption + "\n");
          row["text"] = s + ".caption.txt";
        } else {
          row["text"] = nullptr;
        }
        row["width"] = comp.image.width;
        row["height"] = comp.image.height;
        rows[static_cast<std::size_t>(i)] = row.dump();
        box_counts[static_cast<std::size_t>(i)] = static_cast<int>(comp.boxes.size());
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = n;
        return;
      }
    }
  };
  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  GenerateSummary summary;
  summary.manifest = out_dir / "manifest.jsonl";
  std::string manifest;
  for (int i = 0; i < n; ++i) {
    manifest += rows[static_cast<std::size_t>(i)] + '\n';
    summary.boxes += box_counts[static_cast<std::size_t>(i)];
  }
  write_file(summary.manifest, manifest);
  summary.images = n;
  return summary;
}

namespace {

const char* kToyDescriptions[] = {
    "A round red beetle with a glossy shell that chews young leaves.",
    "A square green bug with flat wings that sucks sap from stems.",
    "A blue moth larva with a pointed head that bores into the grain.",
    "A yellow hopper with striped legs that jumps between rice plants.",
    "A purple mite with tiny hairs that clusters under the leaf."};

struct Rgb {
  int r, g, b;
};

const Rgb kToyColors[] = {{220, 40, 40}, {40, 200, 60}, {50, 80, 230}, {230, 210, 40}, {170, 60, 200}};

// Shape membership for a class at normalized coords u, v in [-1, 1].
bool inside(int shape, double u, double v) {
  switch (shape % 5) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2: return v >= -1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case 3: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
    default: return std::abs(u) + std::abs(v) <= 1.0;
  }
}

}  // namespace

void write_toy_assets(const fs::path& dir, int num_class, int backgrounds,
                      int targets_per_class, int background_size, std::uint64_t seed) {
  if (num_class <= 0 || backgrounds <= 0 || targets_per_class <= 0 || background_size < 16) {
    throw DataError("toy assets: counts must be positive and backgrounds at least 16 px");
  }
  std::mt19937_64 rng(seed);
  const auto bg_dir = dir / "backgrounds", t_dir = dir / "targets";
  fs::create_directories(bg_dir);
  std::uniform_real_distribution<double> u01(0, 1);
  for (int i = 0; i < backgrounds; ++i) {
    image::Raster bg(background_size, background_size, 3);
    const double base = 70 + 50 * u01(rng), gx = 30 * (u01(rng) - 0.5), gy = 30 * (u01(rng) - 0.5);
    for (int y = 0; y < background_size; ++y)
      for (int x = 0; x < background_size; ++x) {
        const double t = base + gx * x / background_size + gy * y / background_size;
        for (int c = 0; c < 3; ++c) {
          const double v = t + (c == 1 ? 10 : 0) + 12 * (u01(rng) - 0.5);
          bg.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    char name[32];
    std::snprintf(name, sizeof(name), "bg_%04d.png", i);
    image::write_png(bg, (bg_dir / name).string());
  }
  const int lo = std::max(6, background_size / 5), hi = std::max(lo, background_size * 3 / 8);
  std::uniform_int_distribution<int> size(lo, hi);
  for (int c = 0; c < num_class; ++c) {
    const auto cdir = t_dir / std::to_string(c);
    fs::create_directories(cdir);
    const Rgb col = kToyColors[c % 5];
    for (int k = 0; k < targets_per_class; ++k) {
      const int w = size(rng), h = size(rng), pad = 2;
      image::Raster t(w + 2 * pad, h + 2 * pad, 4, 0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double uu = 2.0 * (x + 0.5) / w - 1.0, vv = 2.0 * (y + 0.5) / h - 1.0;
          if (!inside(c, uu, vv)) continue;
          const double shade = 0.8 + 0.2 * u01(rng);
          t.at(x + pad, y + pad, 0) = static_cast<std::uint8_t>(col.r * shade);
          t.at(x + pad, y + pad, 1) = static_cast<std::uint8_t>(col.g * shade);
          t.at(x + pad, y + pad, 2) = static_cast<std::uint8_t>(col.b * shade);
          t.at(x + pad, y + pad, 3) = 255;
        }
      char name[32];
      std::snprintf(name, sizeof(name), "t_%04d.png", k);
      image::write_png(t, (cdir / name).string());
    }
    write_file(cdir / "description.txt", std::string(kToyDescriptions[c % 5]) + "\n");
  }
}

}  // namespace msf::acie
