// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "drnet/checkpoint.hpp"
#include "drnet/config.hpp"
#include "drnet/error.hpp"
#include "drnet/model.hpp"
#include "drnet/rpm_data.hpp"
#include "drnet/training.hpp"

namespace py = pybind11;
using namespace drnet;

namespace {

// Configs cross the boundary as the same flat `section.key` dictionaries the
// config files use, so Python never sees a second schema.
ExperimentConfig experiment_from(const std::string& preset, const KeyValues& kv) {
  ExperimentConfig e{model_preset(preset), train_preset(preset)};
  e = apply_key_values(e, kv);
  e.model.validate();
  e.train.validate();
  return e;
}

py::dict problem_to_dict(const RpmProblem& p) {
  py::array_t<std::uint8_t> px({16, p.height, p.width});
  std::copy(p.pixels.begin(), p.pixels.end(), px.mutable_data());
  py::list rules;
  for (const auto& r : p.rules) rules.append(py::make_tuple(to_string(r.attribute), to_string(r.rule)));
  py::dict d;
  d["pixels"] = px;
  d["target"] = p.target;
  d["rules"] = rules;
  d["split"] = to_string(p.split);
  return d;
}

RpmProblem problem_from_dict(const py::dict& d) {
  RpmProblem p;
  auto px = d["pixels"].cast<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>();
  if (px.ndim() != 3 || px.shape(0) != 16) throw ConfigError("pixels must have shape (16, H, W)");
  p.height = int(px.shape(1));
  p.width = int(px.shape(2));
  p.pixels.assign(px.data(), px.data() + px.size());
  p.target = d["target"].cast<int>();
  if (d.contains("rules"))
    for (auto r : d["rules"].cast<py::list>()) {
      auto t = r.cast<py::tuple>();
      p.rules.push_back({parse_attribute(t[0].cast<std::string>()), parse_rule(t[1].cast<std::string>())});
    }
  p.validate();
  return p;
}

py::dict counts_to_dict(const ParamCounts& c) {
  py::dict d;
  d["cnn"] = c.cnn;
  d["vit"] = c.vit;
  d["fusion"] = c.fusion;
  d["rule"] = c.rule;
  d["classifier"] = c.classifier;
  d["total"] = c.total();
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& preset, const KeyValues& overrides, std::uint64_t seed)
      : model_(experiment_from(preset, overrides).model, seed) {}

  static PyModel from_checkpoint(const std::filesystem::path& path) {
    PyModel m(checkpoint_model_config(path));
    load_checkpoint(path, m.model_);
    return m;
  }

  KeyValues config() const { return to_key_values(model_.config()); }
  py::dict param_counts() const { return counts_to_dict(model_.param_counts()); }

  py::array_t<float> scores(py::array_t<float, py::array::c_style | py::array::forcecast> panels) {
    const int s = model_.config().image_size;
    if (panels.ndim() != 4 || panels.shape(1) != 16 || panels.shape(2) != s || panels.shape(3) != s)
      throw ConfigError("panels must have shape (B, 16, " + std::to_string(s) + ", " +
                        std::to_string(s) + ")");
    Tensor<float> x({std::size_t(panels.shape(0)), 16, std::size_t(s), std::size_t(s)});
    std::copy(panels.data(), panels.data() + panels.size(), x.vec().begin());
    Tensor<float> y;
    {
      py::gil_scoped_release release;
      y = model_.forward(x, Mode::kEval);
    }
    py::array_t<float> out({py::ssize_t(y.shape()[0]), py::ssize_t(8)});
    std::copy(y.vec().begin(), y.vec().end(), out.mutable_data());
    return out;
  }

  py::dict evaluate(const py::list& problems, int batch_size) {
    std::vector<RpmProblem> data;
    for (auto p : problems) data.push_back(problem_from_dict(p.cast<py::dict>()));
    EvalResult r;
    {
      py::gil_scoped_release release;
      r = drnet::evaluate(model_, data, batch_size);
    }
    py::dict per_rule;
    for (const auto& [label, acc] : r.per_rule) per_rule[py::str(label)] = py::make_tuple(acc.correct, acc.total);
    py::dict d;
    d["accuracy"] = r.accuracy;
    d["loss"] = r.loss;
    d["n"] = r.n;
    d["predictions"] = r.predictions;
    d["per_rule"] = per_rule;
    return d;
  }

  void save(const std::filesystem::path& path) const { save_checkpoint<float>(path, model_, nullptr, CheckpointMeta{}); }

 private:
  explicit PyModel(const ModelConfig& cfg) : model_(cfg) {}
  DrNet<float> model_;
};

}  // namespace

PYBIND11_MODULE(_drnet, m) {
  m.doc() = "DRNet: dual-stream CNN + ViT reasoning network for RPM puzzles";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<GenerationError>(m, "GenerationError", base);

  m.def("preset_names", &model_preset_names);
  m.def("experiment_config",
        [](const std::string& preset, const KeyValues& overrides) {
          return to_key_values(experiment_from(preset, overrides));
        },
        py::arg("preset") = "default", py::arg("overrides") = KeyValues{});
  m.def("param_counts",
        [](const std::string& preset, const KeyValues& overrides) {
          return counts_to_dict(DrNet<float>(experiment_from(preset, overrides).model).param_counts());
        },
        py::arg("preset") = "default", py::arg("overrides") = KeyValues{});

  m.def("generate",
        [](const KeyValues& spec, std::uint64_t index) {
          return problem_to_dict(generate_minirpm(spec_from_key_values(spec), index));
        },
        py::arg("spec") = KeyValues{}, py::arg("index") = 0,
        "Generate one puzzle. `spec` holds data.* keys; missing keys keep their defaults.");
  m.def("write_dataset",
        [](const KeyValues& spec, const std::filesystem::path& root, int workers) {
          const auto s = write_dataset(spec_from_key_values(spec), root, workers);
          return py::dict(py::arg("train") = s.train, py::arg("val") = s.val, py::arg("test") = s.test,
                          py::arg("manifest_hash") = s.manifest_hash);
        },
        py::arg("spec"), py::arg("root"), py::arg("workers") = 1);
  m.def("load_split",
        [](const std::filesystem::path& root, const std::string& split) {
          Split s = split == "train" ? Split::kTrain
                  : split == "val"   ? Split::kVal
                  : split == "test"  ? Split::kTest
                                     : throw ConfigError("unknown split '" + split + "'");
          py::list out;
          for (const auto& p : load_split(root / split, s)) out.append(problem_to_dict(p));
          return out;
        },
        py::arg("root"), py::arg("split"));
  m.def("encode_rpmx", [](const py::dict& p) {
    const auto b = encode_rpmx(problem_from_dict(p));
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_rpmx", [](const py::bytes& b) {
    const std::string_view s = b;
    return problem_to_dict(decode_rpmx({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
  });

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const KeyValues&, std::uint64_t>(), py::arg("preset") = "default",
           py::arg("overrides") = KeyValues{}, py::arg("seed") = 0)
      .def_static("from_checkpoint", &PyModel::from_checkpoint, py::arg("path"))
      .def_property_readonly("config", &PyModel::config)
      .def("param_counts", &PyModel::param_counts)
      .def("scores", &PyModel::scores, py::arg("panels"),
           "Eval-mode candidate scores (B, 8) for panels (B, 16, S, S) in [0, 1].")
      .def("evaluate", &PyModel::evaluate, py::arg("problems"), py::arg("batch_size") = 64)
      .def("save", &PyModel::save, py::arg("path"));
}
