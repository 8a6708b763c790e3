#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rdinv/forward_solver.hpp"
#include "rdinv/inversion.hpp"

using namespace rdinv;
using oracle::pi;

namespace {

ScalarField field(const SpatialGrid& g, const std::function<double(double)>& fn) {
    return ScalarField::from_function(g, fn);
}

double sup_error(const ScalarField& a, const std::function<double(double)>& ex, std::size_t skip = 0) {
    double e = 0.0;
    for (std::size_t i = skip; i + skip < a.size(); ++i) {
        e = std::max(e, std::abs(a[i] - ex(a.grid().node(i))));
    }
    return e;
}

double sup_error(const ReactionCurve& f, const std::function<double(double)>& ex, double lo, double hi) {
    double e = 0.0;
    for (std::size_t m = 0; m < f.size(); ++m) {
        const double u = f.knots()[m];
        if (u >= lo && u <= hi) {
            e = std::max(e, std::abs(f.nodal_values()[m] - ex(u)));
        }
    }
    return e;
}

/// Placeholder forward problem that only supplies grids and boundary conditions.
ProblemSpec skeleton(const SpatialGrid& g, BoundaryCondition left, BoundaryCondition right) {
    return ProblemSpec(g, TimeGrid(1.0, 10), ScalarField::constant(g, 1.0),
                       ReactionCurve::constant(0.0, 1.0, 2, 0.0), [](double, double) { return 0.0; },
                       ScalarField::constant(g, 0.0), std::move(left), std::move(right));
}

/// a recovered from g_u = x + x^3/3 with f = 0, r = 0 and u_t(T) = (a_ex g_u')'.
double sequential_a_error(int n, const std::function<double(double)>& a_ex,
                          const std::function<double(double)>& flux_prime) {
    const SpatialGrid g(1.0, n);
    const ScalarField gu = field(g, [](double x) { return x + x * x * x / 3; });
    // Outward flux at x = 0 is -a(0) g'(0) = -a_ex(0).
    const auto left = BoundaryCondition::impedance(0.0, -a_ex(0.0));
    const ScalarField a = update_a_sequential(field(g, flux_prime), ReactionCurve::constant(0, 2, 2, 0.0),
                                              gu, ScalarField::constant(g, 0.0), left,
                                              BoundaryCondition::dirichlet(0.0), 1.0, SchemeConfig{});
    return sup_error(a, a_ex);
}

}  // namespace

TEST_CASE("condition checks on simple profiles") {
    const SpatialGrid g(1.0, 100);
    const ScalarField gu = field(g, [](double x) { return x; });
    SchemeConfig cfg;
    cfg.scheme = Scheme::TwoFinalSequential;
    const ScalarField half = field(g, [](double x) { return x / 2; });
    const ConditionReport ok = check_conditions(gu, &half, nullptr, cfg);
    CHECK(*ok.kappa == doctest::Approx(0.5));
    CHECK(ok.range_u.lo == 0.0);
    CHECK(ok.range_u.hi == doctest::Approx(1.0));
    CHECK(ok.range_v->hi == doctest::Approx(0.5));
    CHECK(ok.range_contained);
    CHECK(ok.warnings.empty());

    // kappa = 2 with a trace so that the range condition does not apply.
    SchemeConfig trace_cfg;
    const ScalarField twice = field(g, [](double x) { return 2 * x; });
    const TimeSeries h = TimeSeries::from_function(TimeGrid(1.0, 50), [](double t) { return t; });
    const ConditionReport warn = check_conditions(gu, &twice, &h, trace_cfg);
    CHECK(*warn.kappa == doctest::Approx(2.0));
    REQUIRE(warn.warnings.size() == 1);
    CHECK(warn.warnings[0].find("kappa") != std::string::npos);

    // Under a two-final scheme the same data break the range condition.
    CHECK_THROWS_AS(check_conditions(gu, &twice, nullptr, cfg), ConditionViolation);
}

TEST_CASE("monotonicity floors are hard errors") {
    const SpatialGrid g(1.0, 50);
    const ScalarField falling = field(g, [](double x) { return 1 - x; });
    const TimeSeries h = TimeSeries::from_function(TimeGrid(1.0, 50), [](double t) { return t; });
    CHECK_THROWS_AS(check_conditions(falling, nullptr, &h, SchemeConfig{}), ConditionViolation);
    const TimeSeries flat = TimeSeries::from_function(TimeGrid(1.0, 50), [](double) { return 0.3; });
    const ScalarField rising = field(g, [](double x) { return x; });
    CHECK_THROWS_AS(check_conditions(rising, nullptr, &flat, SchemeConfig{}), ConditionViolation);
    const ConditionReport rep = check_conditions(rising, nullptr, &h, SchemeConfig{});
    CHECK(*rep.min_abs_h_slope == doctest::Approx(1.0));
}

TEST_CASE("scheme config validation") {
    SchemeConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_outer = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SchemeConfig{};
    c.mu_floor = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sequential a-update at the fixed point") {
    // a = 1: (a g')' = 2x.
    const double e = sequential_a_error(100, [](double) { return 1.0; }, [](double x) { return 2 * x; });
    CHECK(e < 1e-4);
}

TEST_CASE("sequential a-update recovers 1 + x at second order") {
    const auto a_ex = [](double x) { return 1 + x; };
    const auto flux_prime = [](double x) { return 1 + 2 * x + 3 * x * x; };
    const double e1 = sequential_a_error(50, a_ex, flux_prime);
    const double e2 = sequential_a_error(100, a_ex, flux_prime);
    CHECK(e1 < 1e-3);
    CHECK(oracle::observed_order(e1, e2) > 1.8);
}

TEST_CASE("zero-flux end contributes no boundary term") {
    const auto flux = boundary_flux(BoundaryCondition::neumann(), BoundaryEnd::Left, 0.7, 1.0, std::nullopt);
    REQUIRE(flux.has_value());
    CHECK(*flux == 0.0);
    CHECK_FALSE(boundary_flux(BoundaryCondition::dirichlet(0.0), BoundaryEnd::Left, 0.0, 1.0, std::nullopt));
    CHECK(*boundary_flux(BoundaryCondition::dirichlet(0.0), BoundaryEnd::Left, 0.0, 1.0, 2.5) == 2.5);
    // Right end: a u_x + gamma u = b.
    CHECK(*boundary_flux(BoundaryCondition::impedance(2.0, 3.0), BoundaryEnd::Right, 0.5, 1.0, std::nullopt) == 2.0);

    // g = x^2 has g'(0) = 0; a = 1 is still recovered away from the end layer.
    const SpatialGrid g(1.0, 100);
    const ScalarField a = update_a_sequential(
        ScalarField::constant(g, 2.0), ReactionCurve::constant(0, 1, 2, 0.0), field(g, [](double x) { return x * x; }),
        ScalarField::constant(g, 0.0), BoundaryCondition::neumann(), BoundaryCondition::dirichlet(0.0), 1.0,
        SchemeConfig{});
    CHECK(sup_error(a, [](double) { return 1.0; }) < 1e-10);
}

TEST_CASE("sequential f-update") {
    const SpatialGrid g(1.0, 200);
    const ReactionCurve layout = ReactionCurve::constant(0.0, 1.0, 201, 0.0);
    // g_v = x, a = 1: f(u) = v_t - r = sin(pi u).
    const ReactionCurve f = update_f_sequential(field(g, [](double x) { return std::sin(pi * x); }),
                                                ScalarField::constant(g, 1.0), field(g, [](double x) { return x; }),
                                                ScalarField::constant(g, 0.0), layout);
    CHECK(sup_error(f, [](double u) { return std::sin(pi * u); }, 0.0, 1.0) < 1e-3);

    // f = 0 with exact inputs: a = 1 + x, g_v = x + x^2/2, (a g_v')' = 2(1 + x).
    const ReactionCurve z = update_f_sequential(field(g, [](double x) { return 2 * (1 + x); }),
                                                field(g, [](double x) { return 1 + x; }),
                                                field(g, [](double x) { return x + x * x / 2; }),
                                                ScalarField::constant(g, 0.0),
                                                ReactionCurve::constant(0.0, 1.5, 201, 0.0));
    CHECK(sup_error(z, [](double) { return 0.0; }, 0.0, 1.5) < 1e-8);
}

TEST_CASE("sequential f-update keeps knots outside range(g_v)") {
    const SpatialGrid g(1.0, 50);
    const ReactionCurve layout = ReactionCurve::constant(0.0, 2.0, 21, 7.0);
    const ReactionCurve f = update_f_sequential(ScalarField::constant(g, 1.0), ScalarField::constant(g, 1.0),
                                                field(g, [](double x) { return x; }),
                                                ScalarField::constant(g, 0.0), layout);
    CHECK(f(1.8) == 7.0);
    CHECK(f(0.5) == doctest::Approx(1.0));
}

TEST_CASE("Wronskian a-update recovers a symbolic coefficient") {
    const auto a_ex = [](double x) { return 1 + x * x / 2; };
    const auto run = [&](int n) {
        const SpatialGrid g(1.0, n);
        const ProblemSpec sk = skeleton(g, BoundaryCondition::dirichlet(0.0), BoundaryCondition::dirichlet(0.0));
        // (a g_u')' = x and (a g_v')' = 2 + 3x^2 for g_u = x, g_v = x^2.
        const ScalarField a = update_a_wronskian(
            field(g, [](double x) { return x; }), field(g, [](double x) { return 2 + 3 * x * x; }),
            ReactionCurve::constant(0, 1, 2, 0.0), field(g, [](double x) { return x; }),
            field(g, [](double x) { return x * x; }), ScalarField::constant(g, 0.0), ScalarField::constant(g, 0.0),
            sk, sk, SchemeConfig{});
        return sup_error(a, a_ex);
    };
    const double e1 = run(50);
    const double e2 = run(100);
    CHECK(e1 < 1e-3);
    CHECK(oracle::observed_order(e1, e2) > 1.8);
}

TEST_CASE("Wronskian a-update at a = 1") {
    const SpatialGrid g(1.0, 100);
    const ProblemSpec sk = skeleton(g, BoundaryCondition::dirichlet(0.0), BoundaryCondition::dirichlet(0.0));
    // g_u = x, g_v = x^2, a = 1: (g_u')' = 0 and (g_v')' = 2.
    const ScalarField a = update_a_wronskian(
        ScalarField::constant(g, 0.0), ScalarField::constant(g, 2.0), ReactionCurve::constant(0, 1, 2, 0.0),
        field(g, [](double x) { return x; }), field(g, [](double x) { return x * x; }), ScalarField::constant(g, 0.0),
        ScalarField::constant(g, 0.0), sk, sk, SchemeConfig{});
    CHECK(sup_error(a, [](double) { return 1.0; }) < 1e-4);
}

TEST_CASE("proportional profiles are degenerate") {
    const SpatialGrid g(1.0, 50);
    const ProblemSpec sk = skeleton(g, BoundaryCondition::dirichlet(0.0), BoundaryCondition::dirichlet(0.0));
    const ScalarField gu = field(g, [](double x) { return x + x * x; });
    const ScalarField gv = field(g, [](double x) { return 0.5 * (x + x * x); });
    CHECK_THROWS_AS(update_a_wronskian(ScalarField::constant(g, 1.0), ScalarField::constant(g, 1.0),
                                       ReactionCurve::constant(0, 2, 2, 0.0), gu, gv,
                                       ScalarField::constant(g, 0.0), ScalarField::constant(g, 0.0), sk, sk,
                                       SchemeConfig{}),
                    DegenerateDataError);
}

TEST_CASE("successive substitution on symbolic data") {
    const SpatialGrid g(0.9, 200);
    const ScalarField gu = field(g, [](double x) { return x; });
    const ScalarField gv = field(g, [](double x) { return x * x / 2; });
    const auto phi_for = [&](const std::function<double(double)>& f) {
        std::vector<double> phi(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = g.node(i);
            phi[i] = f(x) * x - f(x * x / 2);
        }
        return phi;
    };
    SchemeConfig cfg;
    const ReactionCurve start = ReactionCurve::constant(0.0, 0.9, 201, 0.0);

    SUBCASE("zero data stay zero") {
        const SubstitutionResult r = successive_substitution(gu, gv, phi_for([](double) { return 0.0; }), start, cfg);
        CHECK(r.converged);
        CHECK(r.sweep_changes.size() == 1);
        CHECK(sup_error(r.f, [](double) { return 0.0; }, 0.0, 0.9) == 0.0);
    }
    SUBCASE("identity is recovered") {
        const SubstitutionResult r = successive_substitution(gu, gv, phi_for([](double u) { return u; }), start, cfg);
        CHECK(r.converged);
        CHECK(r.kappa_estimate == doctest::Approx(0.9));
        CHECK(sup_error(r.f, [](double u) { return u; }, 0.0, 0.9) < 1e-10);
    }
    SUBCASE("sweeps contract at rate at most kappa") {
        const auto f_ex = [](double u) { return std::sin(3 * u) + 1; };
        const SubstitutionResult r = successive_substitution(gu, gv, phi_for(f_ex), start, cfg);
        CHECK(r.converged);
        for (std::size_t s = 1; s < r.sweep_changes.size(); ++s) {
            CHECK(r.sweep_changes[s] <= 0.9 * r.sweep_changes[s - 1]);
        }
        CHECK(sup_error(r.f, f_ex, 0.0, 0.9) < 1e-4);
    }
}

TEST_CASE("trace f-update reparametrizes by h") {
    const TimeGrid tg(1.0, 40);
    const TimeSeries h = TimeSeries::from_function(tg, [](double t) { return t; });
    const TimeSeries one = TimeSeries::from_function(tg, [](double) { return 1.0; });
    const TimeSeries r = TimeSeries::from_function(tg, [](double t) { return 1 - std::sin(t); });
    const TimeSeries zero = TimeSeries::from_function(tg, [](double) { return 0.0; });
    const ReactionCurve f = update_f_trace(h, one, r, 1.0, zero, ReactionCurve::constant(0.0, 1.0, 41, 0.0));
    for (std::size_t k = 0; k < tg.size(); ++k) {
        const double t = tg.time(static_cast<int>(k));
        CHECK(f(t) == doctest::Approx(std::sin(t)).epsilon(1e-12).scale(1.0));
    }
    const TimeSeries bump = TimeSeries::from_function(tg, [](double t) { return t * (1 - t); });
    CHECK_THROWS_AS(update_f_trace(bump, one, r, 1.0, zero, ReactionCurve::constant(0.0, 1.0, 41, 0.0)),
                    ConditionViolation);
}

TEST_CASE("trace f-update on a linear problem gives zero") {
    const SpatialGrid g(1.0, 200);
    const TimeGrid tg(0.5, 200);
    const auto r = [](double x, double) { return 10 * (1 + 0.5 * std::cos(pi * x)); };
    const ProblemSpec p(g, tg, ScalarField::constant(g, 1.0), ReactionCurve::constant(-5, 30, 2, 0.0), r,
                        ScalarField::constant(g, 0.0), BoundaryCondition::impedance(5.0, 0.0),
                        BoundaryCondition::neumann());
    const StateHistory s = solve_forward(p);
    const TimeSeries h = trace_at(s, BoundaryEnd::Right);
    const TimeSeries r_end = TimeSeries::from_function(tg, [&](double t) { return r(1.0, t); });
    const ReactionCurve f = update_f_trace(h, differentiate(h), r_end, 1.0,
                                           boundary_second_derivative(s, BoundaryEnd::Right),
                                           ReactionCurve::constant(h[0], h[200], 201, 1.0));
    // Away from the start-up layer the residual is discretization error only.
    CHECK(sup_error(f, [](double) { return 0.0; }, h[20], h[200]) < 1e-2);
}

TEST_CASE("lifting a nonzero initial value") {
    const SpatialGrid g(1.0, 100);
    const Forcing r = [](double x, double t) { return x + t; };
    const ProblemSpec base(g, TimeGrid(1.0, 10), ScalarField::constant(g, 1.0),
                           ReactionCurve::constant(0.0, 1.0, 2, 0.0), r, ScalarField::constant(g, 0.0),
                           BoundaryCondition::neumann(), BoundaryCondition::neumann());
    const ProblemSpec same = lift_initial_value(base);
    for (double x : {0.0, 0.37, 1.0}) {
        CHECK(same.forcing()(x, 0.5) == doctest::Approx(r(x, 0.5)));
    }

    const double beta = 5.0;
    const ProblemSpec lifted = lift_initial_value(
        base.with_initial_value(field(g, [&](double x) { return beta * x * x * (1 - x) * (1 - x); })));
    CHECK(lifted.reaction_shift().has_value());
    double e = 0.0;
    for (std::size_t i = 1; i + 1 < g.size(); ++i) {
        const double x = g.node(i);
        e = std::max(e, std::abs(lifted.forcing()(x, 0.0) - r(x, 0.0) - beta * oracle::bump_second_derivative(x)));
    }
    CHECK(e < 1e-2);
    CHECK_THROWS_AS(lift_initial_value(base.with_initial_value(ScalarField::constant(g, 1.0))), ConfigError);
}

TEST_CASE("relative errors") {
    const SpatialGrid g(1.0, 100);
    CHECK(relative_l2_error(ScalarField::constant(g, 2.0), [](double) { return 2.0; }) == 0.0);
    CHECK(relative_l2_error(ScalarField::constant(g, 2.2), [](double) { return 2.0; }) == doctest::Approx(0.1));
    // Only the central 80% of [0, 10] counts: the mismatch near 0 is ignored.
    const ReactionCurve f(0.0, 10.0, {100.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
    CHECK(relative_l2_error(f, [](double) { return 1.0; }, 0.0, 10.0, 0.8) < 0.2);
    CHECK(relative_l2_error(f, [](double) { return 1.0; }, 0.0, 10.0, 1.0) > 1.0);
}

TEST_CASE("result writers") {
    const SpatialGrid g(1.0, 4);
    std::ostringstream a_out;
    write_a_csv(ScalarField::constant(g, 1.5), a_out, [](double) { return 1.0; });
    CHECK(a_out.str().rfind("x,a,a_exact\n0,1.5,1\n0.25,1.5,1\n", 0) == 0);
    std::ostringstream f_out;
    write_f_csv(ReactionCurve(0.0, 1.0, {0.0, 2.0}), f_out);
    CHECK(f_out.str() == "u,f\n0,0\n1,2\n");
}

namespace {

struct TraceRun {
    SpatialGrid grid{1.0, 200};
    ProblemSpec problem;
    ReconstructionData data;
    SchemeConfig cfg;
};

double a_ex(double x) { return 1 + 0.1 * std::sin(pi * x); }
double f_ex(double u) { return std::sin(2 * u); }

TraceRun trace_run() {
    const SpatialGrid g(1.0, 200);
    ProblemSpec p(g, TimeGrid(0.5, 200), field(g, a_ex), ReactionCurve::sampled(-5, 30, 20001, f_ex),
                  [](double x, double) { return 10 * (1 + 0.5 * std::cos(pi * x)); },
                  ScalarField::constant(g, 0.0), BoundaryCondition::impedance(5.0, 0.0), BoundaryCondition::neumann());
    const StateHistory s = solve_forward(p);
    SchemeConfig cfg;
    cfg.a_anchor = a_ex(1.0);
    ReconstructionData d{final_profile(s), std::nullopt, trace_at(s, BoundaryEnd::Right), BoundaryEnd::Right};
    return {g, std::move(p), std::move(d), cfg};
}

}  // namespace

TEST_CASE("final-plus-trace reconstruction from a cold start") {
    const TraceRun run = trace_run();
    const ReconstructionResult res =
        run_reconstruction(run.data, run.problem, nullptr, run.cfg, ScalarField::constant(run.grid, 1.0),
                           ReactionCurve::constant(0.0, 1.0, 201, 0.0));
    REQUIRE(res.a_iterates.size() == 11);
    std::vector<double> ea;
    for (const auto& a : res.a_iterates) ea.push_back(relative_l2_error(a, a_ex));
    // The first a-update still sees f0 = 0, so the decrease starts at k = 1.
    for (std::size_t k = 2; k <= 3; ++k) {
        CHECK(ea[k] < ea[k - 1]);
    }
    CHECK(ea[3] < ea[0]);
    CHECK(ea[3] < 0.02);
    CHECK(ea.back() < 0.05);
    const double lo = run.data.h->values().front();
    const double hi = run.data.h->values().back();
    CHECK(res.f().j_lo() == doctest::Approx(lo));
    CHECK(relative_l2_error(res.f(), f_ex, lo, hi) < 0.1);
    CHECK(std::isnan(res.history[0].da_sup));
}

TEST_CASE("reconstruction stays at the fixed point") {
    const TraceRun run = trace_run();
    const double lo = run.data.h->values().front();
    const double hi = run.data.h->values().back();
    const ReconstructionResult res =
        run_reconstruction(run.data, run.problem, nullptr, run.cfg, field(run.grid, a_ex),
                           ReactionCurve::sampled(lo, hi, 201, f_ex));
    for (std::size_t k = 0; k < res.a_iterates.size(); ++k) {
        CHECK(relative_l2_error(res.a_iterates[k], a_ex) < 0.01);
        CHECK(relative_l2_error(res.f_iterates[k], f_ex, lo, hi) < 0.01);
    }
}

TEST_CASE("data-condition failures carry the flag") {
    const TraceRun run = trace_run();
    ReconstructionData bad = run.data;
    bad.g_u = field(run.grid, [](double x) { return 1 - x; });
    try {
        (void)run_reconstruction(bad, run.problem, nullptr, run.cfg, ScalarField::constant(run.grid, 1.0),
                                 ReactionCurve::constant(0.0, 1.0, 201, 0.0));
        FAIL("expected ReconstructionError");
    } catch (const ReconstructionError& e) {
        CHECK(e.data_condition());
        CHECK(e.partial().a_iterates.empty());
    }
}
