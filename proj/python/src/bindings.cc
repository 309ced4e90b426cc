// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <tuple>

#include "msfnet/acie.h"
#include "msfnet/checkpoint.h"
#include "msfnet/dataset.h"
#include "msfnet/error.h"
#include "msfnet/evalkit.h"
#include "msfnet/gradcheck_suite.h"
#include "msfnet/pipeline.h"
#include "msfnet/run_config.h"
#include "msfnet/srproxy.h"
#include "msfnet/textenc.h"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using DetTuple = std::tuple<int, double, double, double, double, double>;
using TruthTuple = std::tuple<int, double, double, double, double>;

msf::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 3) throw msf::ShapeError("expected a [3 x H x W] array");
  msf::Shape shape(a.shape(), a.shape() + a.ndim());
  return msf::Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const msf::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

msf::RunConfig config_from(const std::string& json_text) {
  if (json_text.empty()) return {};
  return msf::config_from_json(nlohmann::json::parse(json_text));
}

std::vector<const msf::data::Sample*> pick(const msf::data::Dataset& ds,
                                           const std::string& split) {
  const auto s = msf::data::parse_split(split);
  auto chosen = ds.select(s);
  if (chosen.empty() && s != msf::data::Split::kNone) {
    bool tagged = false;
    for (const auto& x : ds.samples) tagged |= x.record.split != msf::data::Split::kNone;
    if (!tagged) chosen = ds.select(msf::data::Split::kNone);
  }
  return chosen;
}

std::string train(const std::string& manifest, const std::string& out,
                  const std::string& config, const std::string& split) {
  const auto ds = msf::data::load_dataset(manifest);
  msf::Trainer trainer(config_from(config), pick(ds, split));
  std::vector<msf::StepLoss> trace;
  {
    py::gil_scoped_release release;
    trace = trainer.run();
  }
  if (!out.empty()) msf::ckpt::save(trainer.checkpoint(), out);
  nlohmann::ordered_json j;
  j["final_step"] = trainer.step_index();
  auto& t = j["trace"] = nlohmann::ordered_json::array();
  for (const auto& s : trace) t.push_back({s.total, s.box, s.objective});
  return j.dump();
}

std::string evaluate_checkpoint(const std::string& checkpoint, const std::string& manifest,
                                const std::string& split) {
  const auto model = msf::load_model(msf::ckpt::load(checkpoint));
  const auto ds = msf::data::load_dataset(manifest);
  py::gil_scoped_release release;
  return msf::eval::to_json(msf::evaluate_model(*model, pick(ds, split)).report).dump();
}

std::string evaluate(const std::vector<std::pair<std::vector<DetTuple>, std::vector<TruthTuple>>>&
                         images,
                     int num_class, double conf_thresh) {
  std::vector<msf::eval::ImageResult> results;
  for (const auto& [dets, truths] : images) {
    msf::eval::ImageResult r;
    for (const auto& [c, conf, x1, y1, x2, y2] : dets) r.detections.push_back({{x1, y1, x2, y2}, conf, c});
    for (const auto& [c, x1, y1, x2, y2] : truths) r.truths.push_back({{x1, y1, x2, y2}, c});
    results.push_back(std::move(r));
  }
  return msf::eval::to_json(msf::eval::evaluate(results, {num_class, conf_thresh})).dump();
}

std::string synth(const std::string& backgrounds, const std::string& targets,
                  const std::string& out, int per_image, int count, std::uint64_t seed,
                  bool scale_jitter) {
  msf::acie::AcieConfig cfg;
  cfg.per_image = per_image;
  cfg.count = count;
  cfg.seed = seed;
  cfg.scale_jitter = scale_jitter;
  const auto pools = msf::acie::load_pools(backgrounds, targets);
  const auto summary = msf::acie::generate(cfg, pools, out);
  nlohmann::ordered_json j;
  j["images"] = summary.images;
  j["boxes"] = summary.boxes;
  j["manifest"] = summary.manifest.string();
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the msfnet detection toolkit";

  py::register_exception<msf::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<msf::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<msf::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<msf::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "tokenize",
      [](const std::string& text, int word_maxlen, int sent_maxlen, int bucket_count) {
        return msf::text::tokenize(text, {word_maxlen, sent_maxlen, bucket_count});
      },
      py::arg("text"), py::arg("word_maxlen") = 41, py::arg("sent_maxlen") = 35,
      py::arg("bucket_count") = 4096);

  m.def(
      "upscale",
      [](const Array& image, int factor, const std::string& method, const std::string& command) {
        msf::sr::UpscaleOptions o;
        o.method = msf::sr::parse_method(method);
        o.external_command = command;
        return to_array(msf::sr::upscale(to_tensor(image), factor, o));
      },
      py::arg("image"), py::arg("factor") = 2, py::arg("method") = "bilinear",
      py::arg("command") = "");
  m.def(
      "degrade",
      [](const Array& image, int factor, double sigma) {
        return to_array(msf::sr::degrade(to_tensor(image), factor, sigma));
      },
      py::arg("image"), py::arg("factor") = 2, py::arg("sigma") = 0.0);

  m.def(
      "iou",
      [](std::tuple<double, double, double, double> a, std::tuple<double, double, double, double> b) {
        const auto [a1, a2, a3, a4] = a;
        const auto [b1, b2, b3, b4] = b;
        return msf::iou({a1, a2, a3, a4}, {b1, b2, b3, b4});
      },
      py::arg("a"), py::arg("b"));

  m.def("evaluate_json", &evaluate, py::arg("images"), py::arg("num_class"),
        py::arg("conf_thresh") = 0.5);
  m.def("default_config_json", [] { return msf::to_json(msf::RunConfig{}).dump(); });
  m.def("resolved_config_json", [](const std::string& config) {
    return msf::to_json(msf::resolved_config(config_from(config))).dump();
  });
  m.def("synth_json", &synth, py::arg("backgrounds"), py::arg("targets"), py::arg("out"),
        py::arg("per_image"), py::arg("count"), py::arg("seed"), py::arg("scale_jitter"));
  m.def("write_toy_assets", [](const std::string& dir, int num_class, int backgrounds,
                               int targets, int size, std::uint64_t seed) {
    msf::acie::write_toy_assets(dir, num_class, backgrounds, targets, size, seed);
  });
  m.def("train_json", &train, py::arg("manifest"), py::arg("out"), py::arg("config"),
        py::arg("split"));
  m.def("evaluate_checkpoint_json", &evaluate_checkpoint, py::arg("checkpoint"),
        py::arg("manifest"), py::arg("split"));
  m.def(
      "gradcheck_json",
      [](const std::string& config, int coords, const std::string& corrupt) {
        msf::SuiteOptions o;
        o.coords_per_tensor = coords;
        o.corrupt = corrupt;
        const auto cfg = config_from(config);
        py::gil_scoped_release release;
        return msf::to_json(msf::run_gradcheck_suite(cfg, o)).dump();
      },
      py::arg("config"), py::arg("coords"), py::arg("corrupt") = "");
}
