// Python bindings: config-driven entry points returning numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rdinv/errors.hpp"
#include "rdinv/experiment.hpp"
#include "rdinv/forward_solver.hpp"
#include "rdinv/sensitivity.hpp"

namespace py = pybind11;
using namespace rdinv;

namespace {

py::array_t<double> to_array(std::span<const double> v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

ExperimentConfig config_from(const std::string& json_text, const std::string& base_dir) {
    return parse_config(json_text, base_dir);
}

py::dict py_forward(const std::string& json_text, const std::string& base_dir) {
    const ExperimentConfig cfg = config_from(json_text, base_dir);
    if (!cfg.truth) throw ConfigError("forward needs a truth block");
    const StateHistory s = solve_forward(build_problem(cfg, cfg.run_u, truth_a(cfg), truth_f(cfg)));
    py::array_t<double> u({static_cast<py::ssize_t>(s.n_rows()), static_cast<py::ssize_t>(s.n_cols())});
    std::copy(s.data().begin(), s.data().end(), u.mutable_data());
    py::dict d;
    d["x"] = to_array(s.grid().nodes());
    d["t"] = to_array(s.timegrid().times());
    d["u"] = u;
    return d;
}

py::dict py_invert(const std::string& json_text, const std::string& base_dir) {
    const ExperimentConfig cfg = config_from(json_text, base_dir);
    if (!cfg.truth) throw ConfigError("the Python invert entry point synthesizes data and needs a truth block");
    const InversionOutcome out = invert(cfg, synthesize(cfg));
    const auto& r = out.result;
    py::dict d;
    d["x"] = to_array(r.a().grid().nodes());
    d["a"] = to_array(r.a().values());
    d["u"] = to_array(r.f().knots());
    d["f"] = to_array(r.f().nodal_values());
    d["iterations"] = r.history.size() - 1;
    d["converged"] = r.converged;
    d["warnings"] = r.warnings;
    d["a_errors"] = out.a_errors;
    d["f_errors"] = out.f_errors;
    return d;
}

py::dict py_singular_values(int n_steps, double horizon, int n_cells, int n_modes, int jobs) {
    SensitivitySetup setup;
    setup.horizon = horizon;
    setup.n_cells = n_cells;
    setup.n_modes = n_modes;
    setup.n_steps = {n_steps};
    setup.validate();
    SensitivityContext ctx(setup, n_steps);
    ctx.prepare();
    py::dict d;
    d["a"] = to_array(jacobian_singular_values(ctx, SensitivityMode::DiffusionA, jobs));
    d["q"] = to_array(jacobian_singular_values(ctx, SensitivityMode::PotentialQ, jobs));
    return d;
}

py::tuple py_run(const std::string& command, const std::string& config_path, std::optional<std::string> out,
              int jobs, bool verbose, std::optional<std::uint64_t> seed) {
    RunOptions opts;
    if (out) opts.out_dir = *out;
    opts.jobs = jobs;
    opts.verbose = verbose;
    opts.seed_override = seed;
    std::ostringstream log, err;
    const int code = run_command(parse_command(command), config_path, opts, log, err);
    return py::make_tuple(code, log.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Reconstruction of diffusion and reaction coefficients from final-time and trace data";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ConditionViolation>(m, "ConditionViolation", base.ptr());
    py::register_exception<RangeViolation>(m, "RangeViolation", base.ptr());

    m.def("forward", &py_forward, py::arg("config"), py::arg("base_dir") = "",
          "Solve the forward problem of a JSON config; returns x, t and u (rows are time levels).");
    m.def("invert", &py_invert, py::arg("config"), py::arg("base_dir") = "",
          "Synthesize data from the config's truth and reconstruct a and f.");
    m.def("singular_values", &py_singular_values, py::arg("n_steps") = 400, py::arg("horizon") = 1.0,
          py::arg("n_cells") = 400, py::arg("n_modes") = 20, py::arg("jobs") = 1,
          "Singular values of the trace Jacobians with respect to a and q.");
    m.def("run", &py_run, py::arg("command"), py::arg("config"), py::arg("out") = py::none(), py::arg("jobs") = 1,
          py::arg("verbose") = false, py::arg("seed") = py::none(),
          "Run a CLI command; returns (exit_code, log, errors).");
}
