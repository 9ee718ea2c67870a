#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cdrloc/entropy.hpp"
#include "cdrloc/error.hpp"
#include "cdrloc/geo.hpp"
#include "cdrloc/localize.hpp"
#include "cdrloc/odmatrix.hpp"
#include "cdrloc/pipeline.hpp"
#include "cdrloc/profiling.hpp"

namespace py = pybind11;
using namespace cdrloc;

namespace {

LatLon latlon(const std::pair<double, double>& p) { return {p.first, p.second}; }

DfMode df_mode(const std::string& s) {
  auto m = parse_df_mode(s);
  if (!m) throw py::value_error("df_mode must be 'cells' or 'contingency'");
  return *m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CDR load-share detection and home/work localization";

  // Raised with args (code, detail, line).
  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::exception<Error>(m, "CdrlocError", PyExc_RuntimeError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::tuple args = py::make_tuple(std::string(to_string(e.code())), e.detail(), e.line());
      PyErr_SetObject(error_type.get_stored().ptr(), args.ptr());
    }
  });

  m.def("haversine_km", [](std::pair<double, double> a, std::pair<double, double> b) {
    return haversine_km(latlon(a), latlon(b));
  });
  m.def("planar_km", [](std::pair<double, double> a, std::pair<double, double> b) {
    return planar_km(latlon(a), latlon(b));
  });

  m.def("shannon_entropy", [](const std::vector<double>& probabilities) {
    LocationDistribution d;
    d.probabilities = probabilities;
    d.cells.resize(probabilities.size());
    return shannon_entropy(d);
  }, py::arg("probabilities"));
  m.def("nearest_rank_percentile", &nearest_rank_percentile, py::arg("values"), py::arg("pct"));

  m.def("minmax_scale", [](const std::vector<double>& v) { return minmax_scale(v); });
  m.def("weighted_kmeans", [](const std::vector<std::pair<double, double>>& points, const std::vector<double>& weights,
                              std::size_t k, std::uint64_t seed) {
    std::vector<LatLon> pts;
    for (const auto& p : points) pts.push_back(latlon(p));
    auto r = weighted_kmeanspp(pts, weights, k, seed);
    std::vector<std::pair<double, double>> c;
    for (const auto& p : r.centroids) c.emplace_back(p.lat, p.lon);
    return py::make_tuple(c, r.assignment, r.cost_history);
  }, py::arg("points"), py::arg("weights"), py::arg("k") = 1, py::arg("seed") = 1);

  m.def("f1_score", &f1_score);

  m.def("chi_squared_statistic", [](const Matrix& o, const Matrix& e) { return chi_squared_statistic(o, e); });
  m.def("chi_squared_p", &chi_squared_p, py::arg("chi2"), py::arg("df"));
  m.def("chi_squared_test", [](const Matrix& o, const Matrix& e, const std::string& mode) {
    auto r = chi_squared_test(o, e, df_mode(mode));
    py::dict d;
    d["statistic"] = r.statistic;
    d["df"] = r.df;
    d["p"] = r.p;
    d["contributions"] = r.contributions;
    return d;
  }, py::arg("observed"), py::arg("expected"), py::arg("df_mode") = "cells");

  m.def("stage_names", [] {
    std::vector<std::string> names;
    for (auto s : kStageNames) names.emplace_back(s);
    return names;
  });

  m.def("run", [](const std::string& stage, const std::vector<std::pair<std::string, std::string>>& settings) {
    RunConfig config;
    for (const auto& [k, v] : settings) apply_setting(config, k, v);
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_command(config, stage, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("stage"), py::arg("settings"));
}
