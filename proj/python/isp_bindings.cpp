#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "isp/csp.hpp"
#include "isp/diagnostics.hpp"
#include "isp/objective.hpp"
#include "isp/ops.hpp"
#include "isp/trainer.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

isp::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw isp::DimensionError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return isp::Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const isp::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict seed_dict(const isp::SeedResult& s) {
  py::dict d;
  d["seed"] = s.seed;
  d["base_acc"] = s.base_acc;
  d["new_acc"] = s.new_acc;
  d["hm"] = s.hm;
  d["zero_shot_base"] = s.zero_shot_base;
  d["zero_shot_new"] = s.zero_shot_new;
  return d;
}

py::dict metrics_dict(const isp::EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["mean_ce"] = m.mean_ce;
  d["mean_alpha"] = m.mean_alpha;
  d["mean_reg"] = m.mean_reg;
  d["base_train_acc"] = m.base_train_acc;
  return d;
}

py::dict run(const isp::TrainConfig& config) {
  const isp::RunSetup setup = isp::build_run(config);
  std::vector<isp::SeedResult> seeds;
  py::dict metrics;
  for (std::uint64_t seed : config.seeds) {
    isp::TrainResult r;
    {
      py::gil_scoped_release release;
      r = isp::train(setup.encoder, setup.task, config, seed);
      seeds.push_back(isp::evaluate_seed(setup.encoder, setup.task, r.prompts, config, seed));
    }
    py::list rows;
    for (const isp::EpochMetrics& m : r.epochs) rows.append(metrics_dict(m));
    metrics[py::int_(seed)] = rows;
  }
  const isp::EvalReport report = isp::summarize(seeds, config.hash());
  py::dict out;
  out["base_acc"] = report.base_acc;
  out["new_acc"] = report.new_acc;
  out["hm"] = report.hm;
  out["zero_shot_base"] = report.zero_shot_base;
  out["zero_shot_new"] = report.zero_shot_new;
  out["zero_shot_hm"] = report.zero_shot_hm;
  out["config_hash"] = report.config_hash;
  py::list per_seed;
  for (const isp::SeedResult& s : report.per_seed) per_seed.append(seed_dict(s));
  out["per_seed"] = per_seed;
  out["metrics"] = metrics;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Integrated structural prompt learning core";

  py::register_exception<isp::DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<isp::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<isp::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<isp::TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("dct_channels", [](const Array& a) { return to_array(isp::dct_channels(to_tensor(a))); },
        py::arg("a"));
  m.def("idct_channels",
        [](const Array& a, std::size_t d) { return to_array(isp::idct_channels(to_tensor(a), d)); },
        py::arg("coefficients"), py::arg("d"));
  m.def("reduce_visual",
        [](const Array& a, std::size_t d) {
          return to_array(isp::csp::reduce_visual(to_tensor(a), d));
        },
        py::arg("tokens"), py::arg("text_dim"));
  m.def("rbf_row_affinity",
        [](const Array& a, double beta) {
          return to_array(isp::rbf_row_affinity(to_tensor(a), beta));
        },
        py::arg("a"), py::arg("beta") = isp::csp::kDefaultBeta);
  m.def("sym_normalize", [](const Array& a) { return to_array(isp::sym_normalize(to_tensor(a))); },
        py::arg("adjacency"));
  m.def("softmax_rows", [](const Array& a) { return to_array(isp::softmax_rows(to_tensor(a))); },
        py::arg("a"));
  m.def("cosine_rows",
        [](const Array& a, const Array& b) {
          return to_array(isp::cosine_rows(to_tensor(a), to_tensor(b)));
        },
        py::arg("a"), py::arg("b"));

  m.def(
      "sample_weight",
      [](double q, double p, double gamma, double cap, const std::string& clip) {
        return isp::sample_weight(q, p, gamma, cap, isp::parse_alpha_clip(clip));
      },
      py::arg("q"), py::arg("p"), py::arg("gamma") = 0.3, py::arg("cap") = 1.0,
      py::arg("clip") = "min1");
  m.def("harmonic_mean", &isp::harmonic_mean, py::arg("base"), py::arg("novel"));
  m.def("alpha_bucket", &isp::alpha_bucket, py::arg("alpha"), py::arg("cap") = 1.0);

  m.def("grad_check_names", &isp::grad_check_names);
  m.def(
      "grad_check",
      [](const std::string& name) {
        py::dict out;
        for (const isp::GradReport& r : isp::run_grad_checks(name)) out[py::str(r.op_name)] = r.max_rel_err;
        return out;
      },
      py::arg("name") = "");

  py::class_<isp::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("from_text", &isp::TrainConfig::from_text, py::arg("text"))
      .def("to_text", &isp::TrainConfig::to_text)
      .def("hash", &isp::TrainConfig::hash)
      .def_readwrite("lr", &isp::TrainConfig::lr)
      .def_readwrite("epochs", &isp::TrainConfig::epochs)
      .def_readwrite("batch_size", &isp::TrainConfig::batch_size)
      .def_readwrite("seeds", &isp::TrainConfig::seeds);

  m.def("run", &run, py::arg("config"),
        "Train every configured seed and return the evaluation summary.");
}
