// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "msfnet/acie.h"
#include "msfnet/checkpoint.h"
#include "msfnet/dataset.h"
#include "msfnet/error.h"
#include "msfnet/gradcheck_suite.h"
#include "msfnet/pipeline.h"
#include "msfnet/run_config.h"
#include "test_util.h"

using namespace msf;
namespace fs = std::filesystem;

namespace {

fs::path toy_dataset(const std::string& name, int count, int per_image = 2) {
  const auto dir = testing::scratch_dir(name);
  acie::write_toy_assets(dir / "assets", 3, 3, 2, 48, 5);
  const auto pools = acie::load_pools(dir / "assets" / "backgrounds", dir / "assets" / "targets");
  acie::AcieConfig cfg;
  cfg.per_image = per_image;
  cfg.count = count;
  cfg.seed = 3;
  return acie::generate(cfg, pools, dir / "data").manifest;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST_CASE("run config defaults follow the training table") {
  const RunConfig c;
  CHECK(c.batch_size == 4);
  CHECK(c.epochs == 30);
  CHECK(c.learning_rate == 5e-5);
  CHECK(c.weight_decay == 1e-7);
  CHECK(c.dropout == 0.5);
  CHECK(c.conf_thresh == 0.5);
  CHECK(c.nms_thresh == 0.4);
  CHECK(c.word_maxlen == 41);
  CHECK(c.sent_maxlen == 35);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("run config JSON round trip and overrides") {
  RunConfig c = resolved_config(RunConfig{});
  c.seed = 77;
  c.text_enabled = false;
  const auto j = to_json(c);
  const RunConfig back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.bridge.has_value());

  RunConfig o;
  apply_overrides(o, {{"batch-size", "2"}, {"text_enabled", "false"}, {"sr_method", "nearest"},
                      {"learning_rate", "1e-3"}});
  CHECK(o.batch_size == 2);
  CHECK_FALSE(o.text_enabled);
  CHECK(o.sr_method == "nearest");
  CHECK(o.learning_rate == 1e-3);
  CHECK_THROWS_AS(apply_overrides(o, {{"no_such_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(o, {{"conf_thresh", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(o, {{"nms_thresh", "-0.1"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(o, {{"batch_size", "\"four\""}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochs", 3}, {"bogus", 1}}), ConfigError);
}

TEST_CASE("generated manifest loads") {
  const auto manifest = toy_dataset("pipeline_load", 4);
  const auto ds = data::load_dataset(manifest);
  REQUIRE(ds.samples.size() == 4);
  for (const auto& s : ds.samples) {
    CHECK(s.image.shape() == Shape{3, 48, 48});
    CHECK(s.boxes.size() == 2);
    REQUIRE(s.text.has_value());
    CHECK_FALSE(s.text->empty());
  }
  CHECK(data::format_manifest(data::read_manifest(manifest)) == [&] {
    std::ifstream in(manifest);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }());
}

TEST_CASE("null text gives an empty token list") {
  const auto manifest = toy_dataset("pipeline_null_text", 1);
  auto records = data::read_manifest(manifest);
  records[0].text.reset();
  const auto edited = manifest.parent_path() / "no_text.jsonl";
  write(edited, data::format_manifest(records));
  const auto ds = data::load_dataset(edited);
  CHECK_FALSE(ds.samples[0].text.has_value());
  const Model model(RunConfig{});
  const auto p = model.prepare(ds.samples[0]);
  CHECK(p.tokens.empty());
  CHECK(model.forward(p, false, 0).layout.length == 150);
}

TEST_CASE("load errors name the file and line") {
  const auto manifest = toy_dataset("pipeline_errors", 2);
  const auto dir = manifest.parent_path();
  write(dir / "acie_000001.txt", "0 1 2 10 12\n1 3 4 x 9\n");
  try {
    data::load_dataset(manifest);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("acie_000001.txt:2") != std::string::npos);
  }
  write(dir / "bad.jsonl", "{\"image\":\"acie_000000.png\"}\n");
  CHECK_THROWS_WITH_AS(data::load_dataset(dir / "bad.jsonl"),
                       doctest::Contains("bad.jsonl:1"), DataError);
  write(dir / "missing.jsonl",
        "{\"image\":\"nope.png\",\"annotations\":\"nope.txt\",\"text\":null,\"width\":48,"
        "\"height\":48}\n");
  CHECK_THROWS_WITH_AS(data::load_dataset(dir / "missing.jsonl"), doctest::Contains("nope.png"),
                       DataError);
}

TEST_CASE("split counts and determinism") {
  CHECK(data::split_counts(10, {0.8, 0.1, 0.1}) == std::array<int, 3>{8, 1, 1});
  CHECK(data::split_counts(100, {0.8, 0.1, 0.1}) == std::array<int, 3>{80, 10, 10});
  for (int n = 1; n <= 60; ++n) {
    const auto c = data::split_counts(n, {0.8, 0.1, 0.1});
    CHECK(c[0] + c[1] + c[2] == n);
    CHECK(std::abs(c[0] - 0.8 * n) < 1.0 + 1e-9);
    CHECK(std::abs(c[1] - 0.1 * n) < 1.0 + 1e-9);
    CHECK(std::abs(c[2] - 0.1 * n) < 1.0 + 1e-9);
  }
  std::vector<data::SampleRecord> recs(10);
  for (int i = 0; i < 10; ++i) recs[i].image = std::to_string(i);
  const auto a = data::split(recs, {0.8, 0.1, 0.1}, 4);
  const auto b = data::split(recs, {0.8, 0.1, 0.1}, 4);
  const auto c = data::split(recs, {0.8, 0.1, 0.1}, 5);
  CHECK(data::format_manifest(a) == data::format_manifest(b));
  CHECK(data::format_manifest(a) != data::format_manifest(c));
  int train = 0;
  for (const auto& r : a) train += r.split == data::Split::kTrain;
  CHECK(train == 8);
  CHECK_THROWS_AS(data::split({}, {0.8, 0.1, 0.1}, 0), DataError);
  CHECK_THROWS_AS(data::split_counts(5, {0.5, 0.1, 0.1}), DataError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = testing::scratch_dir("pipeline_ckpt");
  ckpt::Checkpoint ck;
  ck.meta["config"] = to_json(RunConfig{});
  ck.tensors.emplace_back("a", Tensor::from({2, 3}, {1.0, -0.0, 1e-300, 3.14159, -2.5, 1e300}));
  ck.tensors.emplace_back("scalar", Tensor::from({}, {0.1}));
  ckpt::save(ck, (dir / "c.bin").string());
  const auto back = ckpt::load((dir / "c.bin").string());
  CHECK(back.meta.dump() == ck.meta.dump());
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].first == "a");
  CHECK(back.get("a").shape() == Shape{2, 3});
  for (int i = 0; i < 6; ++i) {
    CHECK(std::signbit(back.get("a").data()[i]) == std::signbit(ck.tensors[0].second.data()[i]));
    CHECK(back.get("a").data()[i] == ck.tensors[0].second.data()[i]);
  }
  CHECK(back.get("scalar").item() == 0.1);

  std::ifstream in(dir / "c.bin", std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(in), {});
  CHECK(bytes.substr(0, 8) == "MSFNETCK");
  write(dir / "short.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_WITH_AS(ckpt::load((dir / "short.bin").string()), doctest::Contains("truncated"),
                       DataError);
  bytes[0] = 'X';
  write(dir / "magic.bin", bytes);
  CHECK_THROWS_WITH_AS(ckpt::load((dir / "magic.bin").string()), doctest::Contains("magic"),
                       DataError);
}

TEST_CASE("ablation switches change only the documented structure") {
  const auto ds = data::load_dataset(toy_dataset("pipeline_ablation", 1));
  const auto& sample = ds.samples[0];
  const Model full(RunConfig{});
  const auto p = full.prepare(sample);
  const auto n = static_cast<std::int64_t>(p.tokens.size());
  REQUIRE(n > 0);
  const auto out = full.forward(p, false, 0);
  CHECK(out.layout.length == n + 150);

  RunConfig no_text;
  no_text.text_enabled = false;
  const Model nt(no_text);
  const auto pt = nt.prepare(sample);
  const auto out_nt = nt.forward(pt, false, 0);
  CHECK(out_nt.layout.length == out.layout.length - n);

  RunConfig dup;
  dup.duplicate_text = true;
  const Model d(dup);
  CHECK(d.forward(d.prepare(sample), false, 0).layout.length == 2 * n + 150);

  RunConfig no_sr;
  no_sr.sr_enabled = false;
  const Model ns(no_sr);
  const auto ps = ns.prepare(sample);
  CHECK(ps.sr_input.shape() == p.sr_input.shape());
  // Without super-resolution both streams are the nearest upscale.
  CHECK(std::equal(ps.sr_input.data().begin(), ps.sr_input.data().end(),
                   ps.lr_input.data().begin()));
  const auto out_ns = ns.forward(ps, false, 0);
  CHECK(out_ns.layout.length == out.layout.length);
  for (int l = 0; l < 3; ++l) CHECK(out_ns.raw[l].shape() == out.raw[l].shape());
}

TEST_CASE("training overfits one sample and resumes exactly") {
  const auto ds = data::load_dataset(toy_dataset("pipeline_train", 1));
  RunConfig cfg;
  cfg.max_steps = 50;
  cfg.batch_size = 1;
  cfg.learning_rate = 5e-4;
  Trainer trainer(cfg, ds.select(data::Split::kNone));
  const auto trace = trainer.run();
  REQUIRE(trace.size() == 50);
  CHECK(trace.back().total < 0.5 * trace.front().total);
  for (const auto& s : trace) {
    CHECK(s.total == doctest::Approx(s.box + s.objective).epsilon(1e-12));
    CHECK(std::isfinite(s.total));
  }

  // Checkpoint at step 50, continue one step, compare with a restored run.
  const auto dir = testing::scratch_dir("pipeline_resume");
  ckpt::save(trainer.checkpoint(), (dir / "c.bin").string());
  RunConfig more = cfg;
  more.max_steps = 60;
  Trainer resumed(ckpt::load((dir / "c.bin").string()), more, ds.select(data::Split::kNone));
  CHECK(resumed.step_index() == 50);
  const auto a = trainer.step();
  const auto b = resumed.step();
  CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  CHECK(a.total == b.total);
  CHECK(a.step == 50);
  CHECK(b.step == 50);
}

TEST_CASE("non-finite weights abort with the step index") {
  const auto ds = data::load_dataset(toy_dataset("pipeline_nan", 1));
  RunConfig cfg;
  cfg.max_steps = 3;
  Trainer trainer(cfg, ds.select(data::Split::kNone));
  trainer.step();
  auto params = trainer.model().parameters();
  for (auto& [name, t] : params) {
    if (name.find("heads") != std::string::npos || name.find("head") != std::string::npos) {
      t.mutable_data()[0] = std::nan("");
    }
  }
  CHECK_THROWS_WITH_AS(trainer.step(), doctest::Contains("step 1"), NumericError);
}

TEST_CASE("evaluation of an overfit sample") {
  const auto ds = data::load_dataset(toy_dataset("pipeline_eval", 1));
  RunConfig cfg;
  cfg.max_steps = 100;
  cfg.batch_size = 1;
  cfg.learning_rate = 5e-4;
  Trainer trainer(cfg, ds.select(data::Split::kNone));
  trainer.run();
  const auto ev = evaluate_model(trainer.model(), ds.select(data::Split::kNone));
  CHECK(ev.report.map50 == 1.0);
  const auto again = evaluate_model(trainer.model(), ds.select(data::Split::kNone));
  CHECK(eval::to_json(again.report).dump() == eval::to_json(ev.report).dump());
  CHECK(format_detections(again.images[0].detections) ==
        format_detections(ev.images[0].detections));
  CHECK_THROWS_AS(evaluate_model(trainer.model(), ds.select(data::Split::kTest)), DataError);

  // Annotations naming a class the model does not have.
  auto wrong = ds.samples[0];
  wrong.boxes[0].class_id = 7;
  CHECK_THROWS_WITH_AS(evaluate_model(trainer.model(), {&wrong}), doctest::Contains("class 7"),
                       DataError);
}

TEST_CASE("detection lines use six decimals") {
  std::vector<Detection> dets = {{{1.0, 2.5, 10.125, 20.0}, 0.875, 2}};
  CHECK(format_detections(dets) == "2 0.875000 1.000000 2.500000 10.125000 20.000000\n");
}

TEST_CASE("gradient suite covers every op and catches a broken rule") {
  RunConfig cfg;
  SuiteOptions o;
  o.coords_per_tensor = 2;
  const auto report = run_gradcheck_suite(cfg, o);
  for (const auto& name : registered_ops()) {
    const bool listed = std::any_of(report.components.begin(), report.components.end(),
                                    [&](const ComponentCheck& c) { return c.name == name; });
    CHECK_MESSAGE(listed, name);
  }
  for (const auto& c : report.components) {
    CAPTURE(c.name);
    CHECK(c.max_rel_error < 1e-4);
    CHECK(c.coords > 0);
    CHECK(c.skipped <= c.coords / 10);
  }
  CHECK(report.passed());

  o.corrupt = "matmul";
  const auto broken = run_gradcheck_suite(cfg, o);
  CHECK_FALSE(broken.passed());
  for (const auto& c : broken.components) CHECK(c.passed == (c.name != "matmul"));
}
