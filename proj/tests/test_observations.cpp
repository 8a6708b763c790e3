#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "rdinv/forward_solver.hpp"
#include "rdinv/observations.hpp"

using namespace rdinv;

namespace {

/// Final profile of the clean final-plus-trace configuration used throughout the tests.
ScalarField reference_profile() {
    const SpatialGrid g(1.0, 200);
    const ProblemSpec p(
        g, TimeGrid(0.5, 200), ScalarField::from_function(g, [](double x) { return 1 + 0.1 * std::sin(oracle::pi * x); }),
        ReactionCurve::sampled(-5, 30, 20001, [](double u) { return std::sin(2 * u); }),
        [](double x, double) { return 10 * (1 + 0.5 * std::cos(oracle::pi * x)); },
        ScalarField::constant(g, 0.0), BoundaryCondition::impedance(5.0, 0.0), BoundaryCondition::neumann());
    return final_profile(solve_forward(p));
}

}  // namespace

TEST_CASE("noise-free sampling is exact and counts match") {
    const SpatialGrid g(1.0, 200);
    const ScalarField f = ScalarField::from_function(g, [](double x) { return x * x; });
    const Samples s = sample_and_perturb(f, 20, NoiseSpec{});
    REQUIRE(s.values.size() == 20);
    CHECK(s.coords.front() == 0.0);
    CHECK(s.coords.back() == 1.0);
    for (std::size_t j = 0; j < 20; ++j) {
        CHECK(s.values[j] == doctest::Approx(s.coords[j] * s.coords[j]).epsilon(1e-4));
    }
    const TimeSeries h = TimeSeries::from_function(TimeGrid(0.5, 200), [](double t) { return t; });
    const Samples sh = sample_and_perturb(h, 25, NoiseSpec{});
    CHECK(sh.values.size() == 25);
    CHECK(sh.coords.back() == 0.5);
}

TEST_CASE("a fixed seed reproduces the perturbation") {
    const ScalarField f = ScalarField::constant(SpatialGrid(1.0, 50), 2.0);
    const NoiseSpec n{0.01, NoiseDistribution::Uniform, 42};
    const Samples a = sample_and_perturb(f, 20, n);
    const Samples b = sample_and_perturb(f, 20, n);
    CHECK(a.values == b.values);
    const Samples c = sample_and_perturb(f, 20, NoiseSpec{0.01, NoiseDistribution::Uniform, 43});
    CHECK(a.values != c.values);
    for (double v : a.values) {
        CHECK(std::abs(v - 2.0) <= 0.02 + 1e-15);
    }
}

TEST_CASE("noise validation") {
    CHECK_THROWS_AS((NoiseSpec{-0.1, NoiseDistribution::Uniform, 0}.validate()), ConfigError);
    CHECK(NoiseSpec{0.0, NoiseDistribution::Gaussian, 0}.second_moment() == 1.0);
}

TEST_CASE("H2 smoothing reproduces linear data for any lambda") {
    const SpatialGrid g(1.0, 100);
    const ScalarField f = ScalarField::from_function(g, [](double x) { return 3 * x - 1; });
    const Samples s = sample_and_perturb(f, 20, NoiseSpec{});
    for (double lambda : {1e-8, 1.0, 1e4}) {
        const SmoothedField out = smooth_to_grid(s, g, SmoothingSpec{SmoothingOrder::H2, lambda});
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(out.field[i] == doctest::Approx(3 * g.node(i) - 1).epsilon(1e-10).scale(1.0));
        }
    }
}

TEST_CASE("vanishing lambda recovers the interpolant") {
    const SpatialGrid g(1.0, 100);
    const ScalarField f = ScalarField::from_function(g, [](double x) { return std::sin(3 * x); });
    const Samples s = sample_and_perturb(f, 101, NoiseSpec{});
    const SmoothedField out = smooth_to_grid(s, g, SmoothingSpec{SmoothingOrder::H2, 1e-12});
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(std::abs(out.field[i] - oracle::interpolate(s.coords, s.values, g.node(i))) < 1e-6);
    }
}

TEST_CASE("discrepancy rule matches the noise-consistent residual") {
    const ScalarField gT = reference_profile();
    const NoiseSpec noise{0.01, NoiseDistribution::Uniform, 7};
    const Samples s = sample_and_perturb(gT, 20, noise);
    const SmoothingSpec spec = SmoothingSpec::default_for(SmoothingOrder::H2, noise);
    CHECK(spec.rule == LambdaRule::Discrepancy);
    const SmoothedField out = smooth_to_grid(s, gT.grid(), spec);

    double sup = 0.0;
    for (double v : gT.values()) sup = std::max(sup, std::abs(v));
    // n (level ||y||_inf)^2 E[xi^2], recomputed here from the samples.
    double ymax = 0.0;
    for (double v : s.values) ymax = std::max(ymax, std::abs(v));
    const double target = 20 * std::pow(0.01 * ymax, 2) / 3.0;
    double residual = 0.0;
    for (std::size_t j = 0; j < s.coords.size(); ++j) {
        residual += std::pow(out.field.interpolate(s.coords[j]) - s.values[j], 2);
    }
    CHECK(residual == doctest::Approx(out.report.residual).epsilon(1e-6));
    CHECK(std::abs(residual - target) <= 0.1 * target);
    CHECK(sup > 0.0);
}

TEST_CASE("noise-free default is a fixed tiny lambda") {
    const SmoothingSpec s = SmoothingSpec::default_for(SmoothingOrder::H1, NoiseSpec{});
    CHECK(s.rule == LambdaRule::Fixed);
    CHECK(s.lambda == 1e-8);
    CHECK(s.order == SmoothingOrder::H1);
}

TEST_CASE("smoothing a time series") {
    const TimeGrid tg(2.0, 40);
    const TimeSeries h = TimeSeries::from_function(tg, [](double t) { return 1 - t; });
    const SmoothedSeries out = smooth_to_grid(sample_and_perturb(h, 25, NoiseSpec{}), tg, SmoothingSpec{});
    CHECK(out.series[40] == doctest::Approx(-1.0));
    CHECK(out.report.min_derivative == doctest::Approx(-1.0));
}

TEST_CASE("sample CSV round trip") {
    const ScalarField f = ScalarField::from_function(SpatialGrid(1.0, 40), [](double x) { return std::exp(x) / 3; });
    const Samples s = sample_and_perturb(f, 11, NoiseSpec{0.02, NoiseDistribution::Uniform, 5});
    const auto path = std::filesystem::temp_directory_path() / "rdinv_samples_roundtrip.csv";
    write_samples_csv(s, "g", path.string());
    std::string kind;
    const Samples r = read_samples_csv(path.string(), &kind);
    CHECK(kind == "g");
    CHECK(r.coords == s.coords);
    CHECK(r.values == s.values);
    CHECK(r.noise.level == 0.02);
    CHECK(r.noise.seed == 5);
    std::filesystem::remove(path);

    std::ostringstream out;
    write_samples_csv(s, "h", out);
    CHECK(out.str().rfind("# kind=h noise=0.02 seed=5\ncoord,value\n", 0) == 0);
}
