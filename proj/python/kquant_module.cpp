// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kquant/cli.hpp"
#include "kquant/error.hpp"
#include "kquant/gaussmath.hpp"
#include "kquant/quantize.hpp"

namespace py = pybind11;
using namespace kquant;

namespace {

RoundingPolicy policy(const std::string& name) { return {rounding_mode_from_string(name)}; }

TensorR tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::int64_t> dims(4, 1);
  if (a.ndim() > 4) throw ShapeError("at most 4 dimensions are supported");
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[static_cast<std::size_t>(4 - a.ndim() + i)] = a.shape(i);
  const Shape4 s{dims[0], dims[1], dims[2], dims[3]};
  return TensorR(s, std::vector<double>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_kquant, m) {
  m.doc() = "Gaussian k-quantile quantization toolkit";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<OverflowError>(m, "AccumulatorOverflowError", PyExc_OverflowError);

  m.def("normal_cdf", [](double x, double mu, double sigma) { return normal_cdf(x, {mu, sigma}); },
        py::arg("x"), py::arg("mu") = 0.0, py::arg("sigma") = 1.0);
  m.def("normal_pdf", [](double x, double mu, double sigma) { return normal_pdf(x, {mu, sigma}); },
        py::arg("x"), py::arg("mu") = 0.0, py::arg("sigma") = 1.0);
  m.def("normal_quantile", [](double q, double mu, double sigma) { return normal_quantile(q, {mu, sigma}); },
        py::arg("q"), py::arg("mu") = 0.0, py::arg("sigma") = 1.0);

  py::class_<ThresholdTable>(m, "ThresholdTable")
      .def_readonly("b_a", &ThresholdTable::b_a)
      .def_readonly("thresholds", &ThresholdTable::thresholds)
      .def_readonly("z", &ThresholdTable::z)
      .def_property_readonly("mu", [](const ThresholdTable& t) { return t.source.mu; })
      .def_property_readonly("sigma", [](const ThresholdTable& t) { return t.source.sigma; })
      .def("levels", &ThresholdTable::levels)
      .def("quantize", [](const ThresholdTable& t, std::int64_t x) { return quantize_activation(x, t); })
      .def("comparator_chain", [](const ThresholdTable& t, std::int64_t x) { return eval_comparator_chain(x, t); })
      .def("__repr__", [](const ThresholdTable& t) {
        std::ostringstream s;
        s << "ThresholdTable(b_a=" << t.b_a << ", thresholds=[";
        for (std::size_t i = 0; i < t.thresholds.size(); ++i) s << (i ? ", " : "") << t.thresholds[i];
        s << "])";
        return s.str();
      });

  m.def("build_threshold_table",
        [](double mu, double sigma, int b_a, const std::string& rounding) {
          return build_threshold_table({mu, sigma}, b_a, policy(rounding));
        },
        py::arg("mu"), py::arg("sigma"), py::arg("b_a"), py::arg("rounding") = "nearest");

  m.def("quantize_weights",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w, int b_w,
           const std::string& rounding) {
          const QuantizedWeights q = quantize_weights(tensor_from(w), b_w, policy(rounding));
          py::array_t<std::int64_t> out(std::vector<py::ssize_t>(w.shape(), w.shape() + w.ndim()));
          std::copy(q.values.storage().begin(), q.values.storage().end(), out.mutable_data());
          return py::make_tuple(out, q.params.mu, q.params.sigma);
        },
        py::arg("w"), py::arg("b_w"), py::arg("rounding") = "nearest",
        "Returns (levels, mu_w, sigma_w).");

  m.def("max_mac", &max_mac, py::arg("b_a"), py::arg("b_w"), py::arg("fan_in"));
  m.def("shift_amount", [](int b_a, int b_w, std::int64_t n_f) { return make_shift_spec(b_a, b_w, n_f).shift; },
        py::arg("b_a"), py::arg("b_w"), py::arg("n_f"));
  m.def("linear_shift_quantize",
        [](std::int64_t mac, int b_a, int b_w, std::int64_t n_f) {
          return linear_shift_quantize(mac, make_shift_spec(b_a, b_w, n_f));
        },
        py::arg("mac"), py::arg("b_a"), py::arg("b_w"), py::arg("n_f"));
  m.def("log2_quantize", &log2_quantize, py::arg("mac"));

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code = 0;
          {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a kquant command; returns (exit_code, stdout, stderr).");
}
