// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Python bindings. Arrays cross the boundary as float64 numpy arrays; loss
// functions return (value, gradients) computed on a fresh tape.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "capreg/autodiff/svd.h"
#include "capreg/checkpoint.h"
#include "capreg/cli.h"
#include "capreg/config.h"
#include "capreg/experiment.h"
#include "capreg/gradcheck.h"
#include "capreg/losses.h"
#include "capreg/probe.h"

namespace py = pybind11;

namespace capreg {
namespace {

using Td = ad::Tensor<double>;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Td to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Td(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ad::Shape& shape, const double* data) {
  Array out(std::vector<py::ssize_t>(shape.begin(), shape.end()));
  std::copy(data, data + out.size(), out.mutable_data());
  return out;
}

Array to_array(const Eigen::MatrixXd& m) {
  Array out({m.rows(), m.cols()});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.mutable_at(i, j) = m(i, j);
  return out;
}

// Evaluates `f` on leaves built from `inputs`; returns the scalar and one
// gradient per input.
template <typename F>
py::tuple value_and_grads(const std::vector<Array>& inputs, F f) {
  ad::Tape<double> tape;
  std::vector<std::shared_ptr<Td>> leaves;
  std::vector<ad::Var<double>> vars;
  for (const Array& a : inputs) {
    leaves.push_back(std::make_shared<Td>(to_tensor(a)));
    vars.push_back(tape.leaf(leaves.back()));
  }
  const ad::Var<double> out = f(vars);
  const double value = out.item();
  tape.backward(out);
  py::list grads;
  for (auto& leaf : leaves) grads.append(to_array(leaf->shape(), leaf->grad().data()));
  return py::make_tuple(value, py::tuple(grads));
}

py::dict gradcheck_row(const GradcheckResult& r) {
  py::dict d;
  d["name"] = r.name;
  d["group"] = r.group;
  d["points"] = r.points;
  d["max_rel_error"] = r.max_rel_error;
  d["passed"] = r.passed;
  return d;
}

py::dict trace_row(const TraceRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["total"] = r.total;
  d["global"] = r.global;
  d["local"] = r.local;
  d["ua"] = r.ua;
  d["mmcr"] = r.mmcr;
  return d;
}

}  // namespace
}  // namespace capreg

PYBIND11_MODULE(_capreg, m) {
  using namespace capreg;
  m.doc() = "capreg core: autodiff losses, nuclear norm, training and probing";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("info_nce", [](const Array& scores) {
    return value_and_grads({scores}, [](auto& v) { return info_nce(v[0]); });
  }, py::arg("scores"), "InfoNCE over a [B, B] score matrix (positives on the diagonal).");
  m.def("nt_xent", [](const Array& a, const Array& b, double tau) {
    return value_and_grads({a, b}, [&](auto& v) { return nt_xent(v[0], v[1], tau); });
  }, py::arg("view_a"), py::arg("view_b"), py::arg("tau") = 0.5);
  m.def("barlow_twins", [](const Array& a, const Array& b, double lambda) {
    return value_and_grads({a, b}, [&](auto& v) { return barlow_twins(v[0], v[1], lambda); });
  }, py::arg("view_a"), py::arg("view_b"), py::arg("lambda_") = 0.005);
  m.def("mmcr_loss", [](const Array& heads, bool normalize) {
    return value_and_grads({heads}, [&](auto& v) { return mmcr_loss(v[0], normalize); });
  }, py::arg("head_outputs"), py::arg("normalize") = true, "Negative nuclear norm of the centroid matrix of [B, N, D] head outputs.");
  m.def("ua_discrepancy", [](const Array& q) {
    return value_and_grads({q}, [](auto& v) { return ua_discrepancy(v[0]); });
  }, py::arg("membership"));
  m.def("nuclear_norm", [](const Array& a) {
    return value_and_grads({a}, [](auto& v) { return ad::nuclear_norm(v[0]); });
  }, py::arg("matrix"));
  m.def("svd", [](const Array& a) {
    const ad::SvdResult r = ad::svd(ad::to_matrix(to_tensor(a)));
    Array s(r.singular_values.size());
    std::copy(r.singular_values.data(), r.singular_values.data() + s.size(), s.mutable_data());
    return py::make_tuple(to_array(r.u), s, to_array(r.v));
  }, py::arg("matrix"), "Thin SVD by one-sided Jacobi: returns (U, S, V) with A = U diag(S) V^T.");
  m.def("estimate_mi_lower_bound", &estimate_mi_lower_bound, py::arg("loss"), py::arg("batch_size"));
  m.def("macro_f1", &macro_f1, py::arg("truth"), py::arg("predicted"));

  m.def("gradcheck", [](const std::string& scope, int points, std::uint64_t seed) {
    GradcheckOptions o;
    o.points = points;
    o.seed = seed;
    py::list rows;
    for (const auto& r : run_gradcheck(scope, o)) rows.append(gradcheck_row(r));
    return rows;
  }, py::arg("scope") = "all", py::arg("points") = 24, py::arg("seed") = 0);

  m.def("canonical_config", [](const std::string& text) { return parse_run_config(text).canonical(); },
        py::arg("text"), "Parses an INI run config and returns its canonical form.");
  m.def("pretrain", [](const std::string& config_text, const std::string& out_dir) {
    const RunConfig config = parse_run_config(config_text);
    PretrainResult r;
    {
      py::gil_scoped_release release;
      r = run_pretrain(config, dataset_for(config), out_dir);
    }
    py::list trace;
    for (const TraceRow& row : r.trace) trace.append(trace_row(row));
    py::dict d;
    d["trace"] = trace;
    d["seconds"] = r.seconds;
    d["manifest"] = r.manifest_path;
    return d;
  }, py::arg("config_text"), py::arg("out_dir") = "");
  m.def("probe", [](const std::string& checkpoint) {
    std::string json;
    {
      py::gil_scoped_release release;
      const Checkpoint ck = load_checkpoint(checkpoint);
      const RunConfig config = parse_run_config(ck.config_text);
      json = report_json(probe_checkpoint(checkpoint, dataset_for(config)));
    }
    return py::module_::import("json").attr("loads")(json);
  }, py::arg("checkpoint"), "Probes a checkpoint on its own dataset; returns the report as a dict.");
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full = {"capreg"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a capreg command in process; returns (exit_code, stdout, stderr).");
}
