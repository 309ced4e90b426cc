// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

// msfnet command-line tool: synth, split, train, eval, gradcheck, sr, inspect.
// Reports go to stdout as JSON; progress and errors go to stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "msfnet/acie.h"
#include "msfnet/checkpoint.h"
#include "msfnet/dataset.h"
#include "msfnet/error.h"
#include "msfnet/gradcheck_suite.h"
#include "msfnet/image.h"
#include "msfnet/pipeline.h"
#include "msfnet/run_config.h"
#include "msfnet/srproxy.h"
#include "msfnet/textenc.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void log(const std::string& msg) { std::fprintf(stderr, "msfnet: %s\n", msg.c_str()); }

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw msf::DataError("cannot write " + p.string());
  out << s;
}

// Leftover `--key value` pairs become config overrides.
std::vector<std::pair<std::string, std::string>> overrides(const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw UsageError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw UsageError("missing value for " + a);
      out.emplace_back(a.substr(2), rest[++i]);
    }
  }
  return out;
}

msf::RunConfig build_config(const std::string& path, const std::vector<std::string>& rest) {
  msf::RunConfig c = path.empty() ? msf::RunConfig{} : msf::load_config(path);
  msf::apply_overrides(c, overrides(rest));
  c.validate();
  return c;
}

// A manifest without split tags is used whole.
std::vector<const msf::data::Sample*> select(const msf::data::Dataset& ds, const std::string& name) {
  const auto split = msf::data::parse_split(name);
  bool tagged = false;
  for (const auto& s : ds.samples) tagged |= s.record.split != msf::data::Split::kNone;
  if (!tagged && split != msf::data::Split::kNone) {
    log("manifest has no split tags; using every sample for '" + name + "'");
    return ds.select(msf::data::Split::kNone);
  }
  return ds.select(split);
}

json loss_json(const msf::StepLoss& s) {
  json j;
  j["step"] = s.step;
  j["epoch"] = s.epoch;
  j["L_PTI"] = s.total;
  j["L_B"] = s.box;
  j["L_O"] = s.objective;
  return j;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string backgrounds, targets, out, toy_assets;
  msf::acie::AcieConfig cfg;
  int toy_classes = 3, toy_backgrounds = 4, toy_targets = 3, toy_size = 48;
};

int run_synth(const SynthArgs& a) {
  std::string bg = a.backgrounds, tg = a.targets;
  if (!a.toy_assets.empty()) {
    msf::acie::write_toy_assets(a.toy_assets, a.toy_classes, a.toy_backgrounds, a.toy_targets,
                                a.toy_size, a.cfg.seed);
    if (bg.empty()) bg = (fs::path(a.toy_assets) / "backgrounds").string();
    if (tg.empty()) tg = (fs::path(a.toy_assets) / "targets").string();
    log("wrote toy assets to " + a.toy_assets);
  }
  if (a.out.empty()) {
    if (a.toy_assets.empty()) throw UsageError("synth needs --out");
    return kOk;
  }
  if (bg.empty() || tg.empty()) throw UsageError("synth needs --backgrounds and --targets");
  a.cfg.validate();
  const auto pools = msf::acie::load_pools(bg, tg);
  const auto summary = msf::acie::generate(a.cfg, pools, a.out);
  json j;
  j["images"] = summary.images;
  j["boxes"] = summary.boxes;
  j["manifest"] = summary.manifest.string();
  emit(j);
  return kOk;
}

// --- split -----------------------------------------------------------------

int run_split(const std::string& manifest, const std::string& out, std::uint64_t seed,
              const std::vector<double>& ratios) {
  if (ratios.size() != 3) throw UsageError("--ratios takes three values");
  const auto records = msf::data::read_manifest(manifest);
  auto tagged = msf::data::split(records, {ratios[0], ratios[1], ratios[2]}, seed);
  // Relative paths follow the manifest when it is written elsewhere.
  const auto from = fs::absolute(fs::path(manifest)).parent_path();
  const auto to = fs::absolute(fs::path(out)).parent_path();
  if (from != to) {
    auto rebase = [&](std::string& p) {
      if (!fs::path(p).is_absolute()) p = fs::relative(from / p, to).generic_string();
    };
    for (auto& r : tagged) {
      rebase(r.image);
      rebase(r.annotations);
      if (r.text) rebase(*r.text);
      if (r.sr_image) rebase(*r.sr_image);
    }
  }
  write_text(out, msf::data::format_manifest(tagged));
  std::map<std::string, int> counts{{"train", 0}, {"val", 0}, {"test", 0}};
  for (const auto& r : tagged) ++counts[msf::data::split_name(r.split)];
  json j;
  j["train"] = counts["train"];
  j["val"] = counts["val"];
  j["test"] = counts["test"];
  j["manifest"] = out;
  emit(j);
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out, config, resume, split = "train", trace_csv;
  int log_every = 10;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& rest) {
  auto cfg = build_config(a.config, rest);
  const auto ds = msf::data::load_dataset(a.manifest);
  const auto samples = select(ds, a.split);
  std::unique_ptr<msf::Trainer> trainer;
  if (!a.resume.empty()) {
    trainer = std::make_unique<msf::Trainer>(msf::ckpt::load(a.resume), cfg, samples);
    log("resumed " + a.resume + " at step " + std::to_string(trainer->step_index()));
  } else {
    trainer = std::make_unique<msf::Trainer>(cfg, samples);
  }
  log("training on " + std::to_string(samples.size()) + " samples for " +
      std::to_string(trainer->total_steps()) + " steps");
  const auto trace = trainer->run([&](const msf::StepLoss& s) {
    if (a.log_every > 0 && (s.step % a.log_every == 0)) {
      char line[128];
      std::snprintf(line, sizeof(line), "step %lld L_PTI %.6f L_B %.6f L_O %.6f",
                    static_cast<long long>(s.step), s.total, s.box, s.objective);
      log(line);
    }
  });
  if (!a.out.empty()) msf::ckpt::save(trainer->checkpoint(), a.out);
  if (!a.trace_csv.empty()) {
    std::string csv = "step,epoch,L_PTI,L_B,L_O\n";
    char line[160];
    for (const auto& s : trace) {
      std::snprintf(line, sizeof(line), "%lld,%d,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(s.step), s.epoch, s.total, s.box, s.objective);
      csv += line;
    }
    write_text(a.trace_csv, csv);
  }
  const auto& m = trainer->model();
  const auto probe = m.prepare(*samples.front());
  const auto layout = m.forward(probe, false, 0).layout;
  json j;
  j["samples"] = samples.size();
  j["steps"] = trace.size();
  j["final_step"] = trainer->step_index();
  j["text_enabled"] = m.config().text_enabled;
  j["sr_enabled"] = m.config().sr_enabled;
  j["sequence_length"] = layout.length;
  j["text_tokens"] = layout.text_tokens;
  if (!trace.empty()) {
    j["initial"] = loss_json(trace.front());
    j["final"] = loss_json(trace.back());
  }
  j["checkpoint"] = a.out.empty() ? json(nullptr) : json(a.out);
  auto& t = j["trace"] = json::array();
  for (const auto& s : trace) t.push_back({s.total, s.box, s.objective});
  emit(j);
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", detections;
  bool csv = false;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& rest) {
  const auto ck = msf::ckpt::load(a.checkpoint);
  auto model = msf::load_model(ck);
  if (!rest.empty()) {
    auto cfg = model->config();
    msf::apply_overrides(cfg, overrides(rest));
    auto tuned = std::make_unique<msf::Model>(cfg);
    auto src = model->parameters();
    auto dst = tuned->parameters();
    if (src.size() != dst.size()) throw msf::ConfigError("overrides changed the model structure");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].second.shape() != dst[i].second.shape())
        throw msf::ConfigError("overrides changed the shape of " + src[i].first);
      std::copy(src[i].second.data().begin(), src[i].second.data().end(),
                dst[i].second.mutable_data().begin());
    }
    model = std::move(tuned);
  }
  const auto ds = msf::data::load_dataset(a.manifest);
  const auto ev = msf::evaluate_model(*model, select(ds, a.split));
  if (!a.detections.empty()) {
    fs::create_directories(a.detections);
    for (const auto& img : ev.images) {
      write_text(fs::path(a.detections) / (fs::path(img.image).stem().string() + ".txt"),
                 msf::format_detections(img.detections));
    }
  }
  if (a.csv) {
    std::cout << msf::eval::csv_header() << "\n" << msf::eval::csv_row(ev.report) << "\n";
  } else {
    emit(msf::eval::to_json(ev.report));
  }
  return kOk;
}

// --- gradcheck -------------------------------------------------------------

int run_gradcheck(const std::string& config, const std::string& corrupt, int coords,
                  const std::vector<std::string>& rest) {
  const auto cfg = build_config(config, rest);
  msf::SuiteOptions o;
  o.corrupt = corrupt;
  o.coords_per_tensor = coords;
  const auto report = msf::run_gradcheck_suite(cfg, o);
  emit(msf::to_json(report));
  if (!report.passed()) {
    for (const auto& c : report.components)
      if (!c.passed) log("gradient check failed: " + c.name);
    return kNumeric;
  }
  return kOk;
}

// --- sr --------------------------------------------------------------------

int run_sr(const std::string& input, const std::string& out, int factor, const std::string& method,
           const std::string& command) {
  msf::sr::UpscaleOptions o;
  o.method = msf::sr::parse_method(method);
  o.external_command = command;
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(input)) {
    files.push_back(input);
  } else {
    throw msf::DataError("missing file " + input);
  }
  fs::create_directories(out);
  json list = json::array();
  for (const auto& f : files) {
    const auto img = msf::image::to_tensor(msf::image::read_png(f.string()));
    const auto up = msf::sr::upscale(img, factor, o);
    const auto dst = fs::path(out) / f.filename();
    msf::image::write_png(msf::image::to_raster(up), dst.string());
    list.push_back(dst.string());
  }
  json j;
  j["method"] = method;
  j["factor"] = factor;
  j["images"] = list;
  emit(j);
  return kOk;
}

// --- inspect ---------------------------------------------------------------

int run_inspect(const std::string& manifest, const std::string& checkpoint) {
  if (manifest.empty() == checkpoint.empty())
    throw UsageError("inspect takes exactly one of --manifest or --checkpoint");
  json j;
  if (!checkpoint.empty()) {
    const auto ck = msf::ckpt::load(checkpoint);
    j["meta"] = ck.meta;
    std::int64_t params = 0;
    auto& t = j["tensors"] = json::array();
    for (const auto& [name, tensor] : ck.tensors) {
      t.push_back({{"name", name}, {"shape", tensor.shape()}});
      if (name.rfind("adam.", 0) != 0) params += tensor.numel();
    }
    j["parameters"] = params;
    emit(j);
    return kOk;
  }
  const auto ds = msf::data::load_dataset(manifest);
  std::map<int, int> per_class;
  std::map<std::string, int> splits;
  std::map<std::string, int> sizes;
  int boxes = 0, with_text = 0;
  std::size_t min_tokens = SIZE_MAX, max_tokens = 0;
  const msf::text::TokenizerOptions tok;
  for (const auto& s : ds.samples) {
    for (const auto& b : s.boxes) ++per_class[b.class_id];
    boxes += static_cast<int>(s.boxes.size());
    ++splits[msf::data::split_name(s.record.split)];
    ++sizes[std::to_string(s.record.width) + "x" + std::to_string(s.record.height)];
    if (s.text) {
      ++with_text;
      const auto n = msf::text::tokenize(*s.text, tok).size();
      min_tokens = std::min(min_tokens, n);
      max_tokens = std::max(max_tokens, n);
    }
  }
  j["samples"] = ds.samples.size();
  j["boxes"] = boxes;
  json pc = json::object();
  for (const auto& [c, n] : per_class) pc[std::to_string(c)] = n;
  j["boxes_per_class"] = pc;
  j["splits"] = splits;
  j["image_sizes"] = sizes;
  j["with_text"] = with_text;
  j["text_tokens"] = with_text ? json{{"min", min_tokens}, {"max", max_tokens}} : json(nullptr);
  emit(j);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msfnet: multi-scale cross-modal fusion detection toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Compose multi-target images with annotations");
  s->add_option("--backgrounds", synth.backgrounds, "Directory of background PNGs");
  s->add_option("--targets", synth.targets, "Directory of targets/<class>/*.png");
  s->add_option("--per-image", synth.cfg.per_image, "Targets per image (R)");
  s->add_option("--count", synth.cfg.count, "Images to generate");
  s->add_option("--seed", synth.cfg.seed, "Global seed");
  s->add_option("--out", synth.out, "Output directory");
  s->add_flag("--scale-jitter", synth.cfg.scale_jitter, "Rescale targets by U[0.5, 1.5]");
  s->add_option("--background-pool", synth.cfg.background_pool, "B; 0 uses all");
  s->add_option("--target-pool", synth.cfg.target_pool, "T; 0 uses all");
  s->add_option("--max-retries", synth.cfg.max_retries, "Placement retries per target");
  s->add_option("--threads", synth.cfg.threads, "Worker threads; 0 = all cores");
  s->add_option("--toy-assets", synth.toy_assets, "Write procedural assets here first");
  s->add_option("--toy-classes", synth.toy_classes, "Classes in the toy assets");
  s->add_option("--toy-backgrounds", synth.toy_backgrounds, "Toy backgrounds");
  s->add_option("--toy-targets", synth.toy_targets, "Toy targets per class");
  s->add_option("--toy-size", synth.toy_size, "Toy background side");

  std::string sp_manifest, sp_out;
  std::uint64_t sp_seed = 0;
  std::vector<double> ratios = {0.8, 0.1, 0.1};
  auto* sp = app.add_subcommand("split", "Tag manifest rows train/val/test");
  sp->add_option("--manifest", sp_manifest, "Input manifest")->required();
  sp->add_option("--out", sp_out, "Tagged manifest")->required();
  sp->add_option("--seed", sp_seed, "Shuffle seed");
  sp->add_option("--ratios", ratios, "Three ratios summing to 1")->delimiter(',');

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train and write a checkpoint");
  t->add_option("--manifest", train.manifest, "Dataset manifest")->required();
  t->add_option("--out", train.out, "Checkpoint path");
  t->add_option("--config", train.config, "Run config JSON");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_option("--split", train.split, "train, val, test or all");
  t->add_option("--trace-csv", train.trace_csv, "Write the per-step loss trace");
  t->add_option("--log-every", train.log_every, "Progress interval in steps");
  t->allow_extras();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  e->add_option("--split", ev.split, "train, val, test or all");
  e->add_option("--detections", ev.detections, "Write per-image detection files here");
  e->add_flag("--csv", ev.csv, "Emit a CSV row instead of JSON");
  e->allow_extras();

  std::string gc_config, gc_corrupt;
  int gc_coords = 4;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference checks of every component");
  g->add_option("--config", gc_config, "Run config JSON");
  g->add_option("--coords", gc_coords, "Coordinates probed per parameter tensor");
  g->add_option("--corrupt", gc_corrupt)->group("");
  g->allow_extras();

  std::string sr_in, sr_out, sr_method = "bilinear", sr_cmd;
  int sr_factor = 2;
  auto* r = app.add_subcommand("sr", "Batch upscale PNG images");
  r->add_option("--input", sr_in, "PNG file or directory")->required();
  r->add_option("--out", sr_out, "Output directory")->required();
  r->add_option("--factor", sr_factor, "2 or 4");
  r->add_option("--method", sr_method, "nearest, bilinear or external");
  r->add_option("--sr-command", sr_cmd, "External command for --method external");

  std::string in_manifest, in_ckpt;
  auto* in = app.add_subcommand("inspect", "Dataset or checkpoint statistics");
  in->add_option("--manifest", in_manifest, "Dataset manifest");
  in->add_option("--checkpoint", in_ckpt, "Checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (sp->parsed()) return run_split(sp_manifest, sp_out, sp_seed, ratios);
    if (t->parsed()) return run_train(train, t->remaining());
    if (e->parsed()) return run_eval(ev, e->remaining());
    if (g->parsed()) return run_gradcheck(gc_config, gc_corrupt, gc_coords, g->remaining());
    if (r->parsed()) return run_sr(sr_in, sr_out, sr_factor, sr_method, sr_cmd);
    if (in->parsed()) return run_inspect(in_manifest, in_ckpt);
  } catch (const UsageError& err) {
    log(std::string("usage: ") + err.what());
    return kUsage;
  } catch (const msf::ConfigError& err) {
    log(std::string("config: ") + err.what());
    return kUsage;
  } catch (const msf::NumericError& err) {
    log(std::string("numeric failure: ") + err.what());
    return kNumeric;
  } catch (const std::exception& err) {
    log(std::string("error: ") + err.what());
    return kData;
  }
  return kUsage;
}
