#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rdinv/forward_solver.hpp"

using namespace rdinv;

namespace {

const Forcing kNoForcing = [](double, double) { return 0.0; };

ProblemSpec heat_problem(int n, double T, const ScalarField& u0, BoundaryCondition left,
                         BoundaryCondition right) {
    const SpatialGrid g(1.0, n);
    return ProblemSpec(g, TimeGrid(T, n), ScalarField::constant(g, 1.0),
                       ReactionCurve::constant(-1.0, 1.0, 3, 0.0), kNoForcing, u0, left, right);
}

double manufactured_error(int n) {
    using namespace oracle::manufactured;
    const SpatialGrid g(1.0, n);
    const TimeGrid tg(1.0, n);
    const ProblemSpec p(g, tg, ScalarField::from_function(g, a),
                        ReactionCurve::sampled(0.0, 3.0, 20001, f), r,
                        ScalarField::from_function(g, [](double x) { return u(x, 0.0); }),
                        BoundaryCondition::impedance(1.0, [](double t) { return b_left(1.0, t); }),
                        BoundaryCondition::impedance(0.5, [](double t) { return b_right(0.5, t); }));
    const StateHistory s = solve_forward(p);
    double err = 0.0;
    for (std::size_t k = 0; k < s.n_rows(); ++k) {
        for (std::size_t i = 0; i < s.n_cols(); ++i) {
            err = std::max(err, std::abs(s(k, i) - u(g.node(i), tg.time(static_cast<int>(k)))));
        }
    }
    return err;
}

}  // namespace

TEST_CASE("eigenmode decays at the analytic rate") {
    const SpatialGrid g(1.0, 200);
    const ScalarField u0 = ScalarField::from_function(g, [](double x) { return std::sin(oracle::pi * x); });
    const StateHistory s = solve_forward(heat_problem(200, 0.1, u0, BoundaryCondition::dirichlet(0.0),
                                                      BoundaryCondition::dirichlet(0.0)));
    const ScalarField gT = final_profile(s);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        err = std::max(err, std::abs(gT[i] - oracle::heat_eigenmode(g.node(i), 0.1)));
    }
    CHECK(err < 5e-4);

    // u_t(T) = -pi^2 e^{-pi^2 T} sin(pi x) up to O(dt^2).
    const ScalarField ut = time_derivative_at_T(s);
    double derr = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        derr = std::max(derr, std::abs(ut[i] + oracle::pi * oracle::pi * oracle::heat_eigenmode(g.node(i), 0.1)));
    }
    CHECK(derr < 5e-3);
}

TEST_CASE("constants are exact under homogeneous Neumann data") {
    const SpatialGrid g(1.0, 16);
    const StateHistory s = solve_forward(heat_problem(16, 1.0, ScalarField::constant(g, 0.7),
                                                      BoundaryCondition::neumann(),
                                                      BoundaryCondition::neumann()));
    for (double v : s.data()) {
        CHECK(v == doctest::Approx(0.7).epsilon(1e-13));
    }
    const TimeSeries h = trace_at(s, BoundaryEnd::Left);
    CHECK(h[h.size() - 1] == doctest::Approx(0.7));
    CHECK(s.homogeneous_neumann(BoundaryEnd::Left));
}

TEST_CASE("Dirichlet trace equals the boundary data") {
    const SpatialGrid g(1.0, 20);
    const StateHistory s = solve_forward(
        heat_problem(20, 0.5, ScalarField::constant(g, 0.0), BoundaryCondition::neumann(),
                     BoundaryCondition::dirichlet([](double t) { return t * t; })));
    const TimeSeries h = trace_at(s, BoundaryEnd::Right);
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double t = h.timegrid().time(static_cast<int>(k));
        CHECK(h[k] == t * t);
    }
}

TEST_CASE("manufactured solution converges at second order") {
    const double e1 = manufactured_error(20);
    const double e2 = manufactured_error(40);
    const double e3 = manufactured_error(80);
    CHECK(oracle::observed_order(e1, e2) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(oracle::observed_order(e2, e3) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("time derivative formula is exact for quadratics in t") {
    const SpatialGrid g(1.0, 4);
    const TimeGrid tg(1.0, 8);
    std::vector<double> lin, quad;
    for (std::size_t k = 0; k < tg.size(); ++k) {
        const double t = tg.time(static_cast<int>(k));
        for (std::size_t i = 0; i < g.size(); ++i) {
            lin.push_back(t);
            quad.push_back(t * t);
        }
    }
    const ScalarField d1 = time_derivative_at_T(StateHistory(g, tg, lin));
    const ScalarField d2 = time_derivative_at_T(StateHistory(g, tg, quad));
    for (double v : d1.values()) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (double v : d2.values()) {
        CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("boundary second derivative at a zero-flux end") {
    const TimeGrid tg(1.0, 4);
    const auto history = [&](const SpatialGrid& g, auto fn) {
        std::vector<double> v;
        for (std::size_t k = 0; k < tg.size(); ++k) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                v.push_back(fn(g.node(i)));
            }
        }
        return StateHistory(g, tg, v, {false, true});
    };
    const SpatialGrid g(1.0, 100);
    const TimeSeries c = boundary_second_derivative(
        history(g, [](double x) { return std::cos(oracle::pi * x); }), BoundaryEnd::Right);
    CHECK(c[2] == doctest::Approx(oracle::pi * oracle::pi).epsilon(1e-3));
    const TimeSeries q =
        boundary_second_derivative(history(g, [](double x) { return x * x - 2 * x; }), BoundaryEnd::Right);
    CHECK(q[1] == doctest::Approx(2.0).epsilon(1e-10));
    const TimeSeries z = boundary_second_derivative(history(g, [](double) { return 4.0; }), BoundaryEnd::Right);
    CHECK(z[3] == 0.0);
}

TEST_CASE("diffusion operator annihilates constants under Neumann data") {
    const std::vector<double> a = {1.0, 2.0, 3.0, 2.0, 1.0};
    const DiffusionOperator op(a, 0.25, BoundaryCondition::neumann(), BoundaryCondition::neumann());
    std::vector<double> u(5, 3.0), out(5);
    op.apply(u, out);
    for (double v : out) {
        CHECK(v == doctest::Approx(0.0).scale(1.0));
    }
}

TEST_CASE("history CSV carries the grid header") {
    const SpatialGrid g(1.0, 4);
    const StateHistory s = solve_forward(heat_problem(4, 1.0, ScalarField::constant(g, 0.0),
                                                      BoundaryCondition::neumann(),
                                                      BoundaryCondition::neumann()));
    std::ostringstream out;
    write_history_csv(s, out);
    CHECK(out.str().rfind("# L=1 T=1 n_cells=4 n_steps=4\n", 0) == 0);
}

TEST_CASE("non-finite states are reported as blow-up") {
    const SpatialGrid g(1.0, 10);
    const Forcing bad = [](double, double t) { return t > 0.5 ? HUGE_VAL : 0.0; };
    const ProblemSpec p(g, TimeGrid(1.0, 10), ScalarField::constant(g, 1.0),
                        ReactionCurve::constant(0.0, 1.0, 2, 0.0), bad,
                        ScalarField::constant(g, 0.0), BoundaryCondition::neumann(),
                        BoundaryCondition::neumann());
    CHECK_THROWS_AS(solve_forward(p), BlowUpError);
}
