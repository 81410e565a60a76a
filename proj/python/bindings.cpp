#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ulab/config.hpp"
#include "ulab/harness.hpp"
#include "ulab/masks.hpp"
#include "ulab/metrics.hpp"
#include "ulab/nn.hpp"

namespace py = pybind11;
using namespace ulab;

namespace {

LabeledBatch batch_of(const Matrix& x, const std::vector<int>& y) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) throw std::invalid_argument("x and y lengths differ");
  return {x, y};
}

GradientPair pair_of(const ParamVector& gu, const ParamVector& gc, const ParamVector& su,
                     const ParamVector& sc) {
  return {gu, gc, su, sc};
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["ua"] = r.ua;
  d["ra"] = r.ra;
  d["ta"] = r.ta;
  d["rua"] = r.rua;
  d["fid"] = r.fid;
  for (const auto& [k, v] : r.mia) d[py::str("mia_" + k)] = v;
  d["rte_seconds"] = r.rte_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient-mask unlearning on small classifiers";

  py::enum_<Activation>(m, "Activation").value("relu", Activation::relu).value("tanh", Activation::tanh);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init([](int input_dim, std::vector<int> hidden, int classes, Activation act) {
             ModelSpec s{input_dim, std::move(hidden), classes, act};
             validate(s);
             return s;
           }),
           py::arg("input_dim"), py::arg("hidden_dims"), py::arg("num_classes"),
           py::arg("activation") = Activation::relu)
      .def_readonly("input_dim", &ModelSpec::input_dim)
      .def_readonly("hidden_dims", &ModelSpec::hidden_dims)
      .def_readonly("num_classes", &ModelSpec::num_classes)
      .def_property_readonly("param_count", [](const ModelSpec& s) { return param_count(s); })
      .def("__repr__", [](const ModelSpec& s) {
        std::string h;
        for (int d : s.hidden_dims) h += (h.empty() ? "" : ", ") + std::to_string(d);
        return "ModelSpec(" + std::to_string(s.input_dim) + ", [" + h + "], " + std::to_string(s.num_classes) + ")";
      });

  m.def("init_params", &init_params, py::arg("spec"), py::arg("seed"));
  m.def("forward", &forward, py::arg("spec"), py::arg("theta"), py::arg("inputs"));
  m.def(
      "grad",
      [](const ModelSpec& spec, const ParamVector& theta, const Matrix& x, const std::vector<int>& y,
         const std::string& loss, std::optional<ParamVector> reference) {
        const ParamVector* ref = reference ? &*reference : nullptr;
        return grad(spec, theta, batch_of(x, y), parse_loss_kind(loss), ref);
      },
      py::arg("spec"), py::arg("theta"), py::arg("x"), py::arg("y"), py::arg("loss") = "cross_entropy",
      py::arg("reference") = py::none());
  m.def(
      "loss",
      [](const ModelSpec& spec, const ParamVector& theta, const Matrix& x, const std::vector<int>& y,
         const std::string& loss, std::optional<ParamVector> reference) {
        const ParamVector* ref = reference ? &*reference : nullptr;
        return loss_value(spec, theta, batch_of(x, y), {{parse_loss_kind(loss), 1.0}}, ref);
      },
      py::arg("spec"), py::arg("theta"), py::arg("x"), py::arg("y"), py::arg("loss") = "cross_entropy",
      py::arg("reference") = py::none());
  m.def("accuracy", [](const ModelSpec& spec, const ParamVector& theta, const Matrix& x,
                       const std::vector<int>& y) { return accuracy(spec, theta, batch_of(x, y)); });

  m.def(
      "make_blobs",
      [](int num_classes, int train_per_class, int test_per_class, int dim, double separation,
         double noise_std, std::uint64_t seed) {
        BlobsConfig c{num_classes, train_per_class, test_per_class, dim, separation, noise_std};
        const auto d = make_gaussian_blobs(c, seed);
        return py::make_tuple(d.train.inputs, d.train.labels, d.test.inputs, d.test.labels);
      },
      py::arg("num_classes") = 4, py::arg("train_per_class") = 500, py::arg("test_per_class") = 200,
      py::arg("dim") = 16, py::arg("separation") = 3.0, py::arg("noise_std") = 1.0, py::arg("seed") = 0,
      "Returns (x_train, y_train, x_test, y_test).");

  m.def("normal_cdf", &normal_cdf);
  m.def(
      "agg",
      [](const ParamVector& gu, const ParamVector& gc, const std::string& kind, double alpha, double beta) {
        return agg({parse_agg_kind(kind), alpha, beta}, gu, gc);
      },
      py::arg("g_u"), py::arg("g_c"), py::arg("kind") = "linear", py::arg("alpha") = 0.05,
      py::arg("beta") = 0.95);
  m.def("mask_and", [](const ParamVector& gu, const ParamVector& gc) { return mask_and(gu, gc).weights; });
  m.def(
      "agree_prob",
      [](const ParamVector& gu, const ParamVector& gc, const ParamVector& su, const ParamVector& sc, double eps) {
        return agree_prob(pair_of(gu, gc, su, sc), eps);
      },
      py::arg("g_u"), py::arg("g_c"), py::arg("sigma2_u"), py::arg("sigma2_c"), py::arg("eps") = 1e-8);
  m.def(
      "mask_prob",
      [](const ParamVector& gu, const ParamVector& gc, const ParamVector& su, const ParamVector& sc, double p,
         double eps) { return mask_prob(pair_of(gu, gc, su, sc), p, eps).weights; },
      py::arg("g_u"), py::arg("g_c"), py::arg("sigma2_u"), py::arg("sigma2_c"), py::arg("p") = 0.3,
      py::arg("eps") = 1e-8);
  m.def(
      "mask_bernoulli",
      [](const ParamVector& gu, const ParamVector& gc, const ParamVector& su, const ParamVector& sc, double eps,
         std::uint64_t seed) { return mask_bernoulli(pair_of(gu, gc, su, sc), eps, seed).weights; },
      py::arg("g_u"), py::arg("g_c"), py::arg("sigma2_u"), py::arg("sigma2_c"), py::arg("eps") = 1e-8,
      py::arg("seed") = 0);
  m.def(
      "focus_vector",
      [](const ParamVector& gu, const ParamVector& gc, const ParamVector& su, const ParamVector& sc, double eps) {
        return focus_vector(pair_of(gu, gc, su, sc), eps).weights;
      },
      py::arg("g_u"), py::arg("g_c"), py::arg("sigma2_u"), py::arg("sigma2_c"), py::arg("eps") = 1e-8);
  m.def("mask_salun", [](const ParamVector& g) { return mask_salun(g).weights; });

  m.def(
      "default_config", [] { return to_config_text(ExperimentConfig{}); },
      "Canonical text of the default experiment configuration.");
  m.def(
      "run_sweep",
      [](const std::string& config_text) {
        const auto cfg = parse_config(config_text, "<python>");
        std::vector<RunRecord> recs;
        {
          py::gil_scoped_release release;
          recs = run_sweep(cfg);
        }
        py::list out;
        for (const auto& r : recs) {
          py::dict d;
          d["run_id"] = r.run_id;
          d["method"] = std::string(to_string(r.key.method));
          d["addon"] = std::string(to_string(r.key.addon));
          d["seed"] = r.key.seed;
          d["dir"] = r.dir;
          d["error"] = r.error ? py::cast(*r.error) : py::none();
          py::list rows;
          for (const auto& row : r.rows) rows.append(report_dict(row.report));
          d["epochs"] = rows;
          out.append(d);
        }
        return out;
      },
      py::arg("config_text"),
      "Runs every (method, add-on, seed) of the configuration; one dict per run with per-epoch metrics.");
  m.def(
      "aggregate_table",
      [](const std::filesystem::path& output_dir) { return format_aggregate_table(aggregate(load_records(output_dir))); },
      py::arg("output_dir"));
}
