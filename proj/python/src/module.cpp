#include <random>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ocr/calibration.hpp"
#include "ocr/dataset.hpp"
#include "ocr/estimator.hpp"
#include "ocr/geometry.hpp"
#include "ocr/hj_solver.hpp"
#include "ocr/safety_filter.hpp"
#include "ocr/sim.hpp"
#include "ocr/value_net.hpp"

namespace py = pybind11;
using namespace ocr;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_ocr, m) {
  m.doc() = "Observation-conditioned reachability bindings";
  m.attr("__version__") = "0.1.0";

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](double x, double y, double th) { return Pose{x, y, th}; }), py::arg("x"), py::arg("y"),
           py::arg("theta"))
      .def_readwrite("x", &Pose::x)
      .def_readwrite("y", &Pose::y)
      .def_readwrite("theta", &Pose::theta)
      .def("__repr__", [](const Pose& p) {
        return "Pose(" + std::to_string(p.x) + ", " + std::to_string(p.y) + ", " + std::to_string(p.theta) + ")";
      });

  py::class_<Twist>(m, "Twist")
      .def(py::init<>())
      .def(py::init([](double v, double w) { return Twist{v, w}; }), py::arg("v"), py::arg("w"))
      .def_readwrite("v", &Twist::v)
      .def_readwrite("w", &Twist::w)
      .def(py::self == py::self);

  py::class_<DisturbanceBound>(m, "DisturbanceBound")
      .def(py::init<>())
      .def(py::init([](double dxy, double dth) { return DisturbanceBound{dxy, dth}; }), py::arg("d_xy"),
           py::arg("d_theta"))
      .def_readwrite("d_xy", &DisturbanceBound::d_xy)
      .def_readwrite("d_theta", &DisturbanceBound::d_theta);

  py::class_<ControlBounds>(m, "ControlBounds").def(py::init<>());

  py::class_<Environment>(m, "Environment")
      .def(py::init<>())
      .def_static(
          "from_dict", [](const py::object& o) { return from_python(o).get<Environment>(); },
          "Builds an environment from its JSON dictionary form.")
      .def("to_dict", [](const Environment& e) { return to_python(nlohmann::json(e)); })
      .def_static("load", &load_environment)
      .def("save", [](const Environment& e, const std::string& path) { save_environment(e, path); })
      .def("validate", [](const Environment& e) { validate(e); })
      .def_readwrite("dbound", &Environment::dbound)
      .def_property_readonly("obstacle_count", [](const Environment& e) { return e.obstacles.size(); });

  m.def("wrap_angle", &wrap_angle);
  m.def(
      "failure_value", [](const Environment& env, double x, double y) { return failure_value(env, Vec2(x, y)); },
      py::arg("env"), py::arg("x"), py::arg("y"));
  m.def(
      "raycast", [](const Environment& env, const Pose& pose) { return raycast(env, pose).ranges; },
      py::arg("env"), py::arg("pose"), "Ranges of a 100-beam scan taken at `pose`.");

  py::class_<ValueGrid>(m, "ValueGrid")
      .def_readonly("converged", &ValueGrid::converged)
      .def_readonly("residual", &ValueGrid::residual)
      .def_readonly("steps", &ValueGrid::steps)
      .def("sample",
           [](const ValueGrid& vg, const Pose& p) {
             const ValueSample s = sample(vg, p);
             return py::make_tuple(s.value, s.gradient);
           })
      .def("save", [](const ValueGrid& vg, const std::string& path) { save_value_grid(vg, path); })
      .def_static("load", &load_value_grid);
  m.def(
      "solve",
      [](const Environment& env, const std::string& grid, double horizon, double tol) {
        SolverOptions opt;
        opt.horizon = horizon;
        opt.tol = tol;
        py::gil_scoped_release release;
        return solve(env, Grid3::parse(grid, env.workspace), ControlBounds{}, opt);
      },
      py::arg("env"), py::arg("grid") = "100x100x60", py::arg("horizon") = 2.0, py::arg("tol") = 1e-3);

  py::class_<ValueNet>(m, "ValueNet")
      .def(py::init<std::vector<int>, int, std::uint64_t, double>(), py::arg("hidden"), py::arg("beam_count") = 100,
           py::arg("seed") = 0, py::arg("omega0") = 30.0)
      .def_static("load", &load_net)
      .def("save", [](const ValueNet& n, const std::string& path) { save_net(n, path); })
      .def("forward",
           [](const ValueNet& n, const Pose& s, const DisturbanceBound& db, const std::vector<double>& scan) {
             return n.forward(s, db, scan);
           })
      .def("input_gradient",
           [](const ValueNet& n, const Pose& s, const DisturbanceBound& db, const std::vector<double>& scan) {
             return n.input_gradient(s, db, scan);
           })
      .def_property_readonly("hidden", &ValueNet::hidden)
      .def_property_readonly("beam_count", &ValueNet::beam_count);

  m.def("compute_k", &compute_k, py::arg("N"), py::arg("epsilon"), py::arg("beta"));
  m.def("binomial_log_cdf", &binomial_log_cdf, py::arg("N"), py::arg("k"), py::arg("epsilon"));
  m.def(
      "calibrate_scores",
      [](const std::vector<double>& pool, long N, double eps, double beta, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return to_python(nlohmann::json(calibrate_scores(pool, N, eps, beta, rng)));
      },
      py::arg("scores"), py::arg("N"), py::arg("epsilon"), py::arg("beta"), py::arg("seed") = 0);

  py::class_<QpSolution>(m, "QpSolution")
      .def_readonly("twist", &QpSolution::twist)
      .def_readonly("slack", &QpSolution::slack)
      .def_readonly("objective", &QpSolution::objective);
  m.def(
      "solve_filter_qp",
      [](const Vec3& g, double theta, const DisturbanceBound& db, const Twist& nominal, double lambda) {
        return solve_filter_qp(g, theta, db, nominal, ControlBounds{}, lambda);
      },
      py::arg("gradient"), py::arg("theta"), py::arg("dbound"), py::arg("nominal"), py::arg("lam") = 1e3);

  m.def(
      "run_trial",
      [](const py::object& config, const ValueNet* net, double delta) {
        const nlohmann::json c = from_python(config);
        TrialConfig tc;
        if (c.contains("env")) tc.env = c.at("env").get<Environment>();
        tc.planner = parse_planner(c.value("planner", std::string("nve")));
        tc.filter = parse_filter_mode(c.value("filter", std::string("none")));
        tc.seed = c.value("seed", std::uint64_t{0});
        tc.timeout = c.value("timeout", 60.0);
        std::mt19937_64 trng(c.value("tier_seed", std::uint64_t{0}));
        tc.plant = sample_tier(parse_tier(c.value("tier", std::string("easy"))), trng);
        TrialLog log;
        {
          py::gil_scoped_release release;
          log = run_trial(tc, net, delta);
        }
        return to_python(nlohmann::json(log.summary));
      },
      py::arg("config"), py::arg("net") = nullptr, py::arg("delta") = 0.0,
      "Runs one trial. `config` holds env, planner, filter, seed, timeout, tier and tier_seed.");
}
