#include "rdinv/sensitivity.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <memory>
#include <ostream>

#include "rdinv/csv.hpp"
#include "rdinv/parallel.hpp"

namespace rdinv {

void SensitivitySetup::validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw ConfigError("sensitivity horizon must be positive");
    }
    if (n_cells < 4) {
        throw ConfigError("sensitivity grid needs at least 4 cells");
    }
    if (n_steps.empty()) {
        throw ConfigError("sensitivity needs at least one time grid");
    }
    for (int s : n_steps) {
        if (s < 2) {
            throw ConfigError("sensitivity time grids need at least 2 steps");
        }
    }
    if (n_modes < 1) {
        throw ConfigError("sensitivity needs at least one mode");
    }
}

const char* to_string(SensitivityMode m) noexcept {
    return m == SensitivityMode::DiffusionA ? "a" : "q";
}

const char* to_string(SensitivityLayout l) noexcept {
    return l == SensitivityLayout::NeumannLeft ? "neumann_left" : "neumann_right";
}

namespace {

bool neumann_left(const SensitivitySetup& s) {
    return s.layout == SensitivityLayout::NeumannLeft;
}

}  // namespace

SensitivityContext::SensitivityContext(const SensitivitySetup& setup, int n_steps)
    : setup_((setup.validate(), setup)),
      grid_(1.0, setup.n_cells),
      timegrid_(setup.horizon, n_steps),
      left_(neumann_left(setup) ? BoundaryCondition::neumann() : BoundaryCondition::dirichlet(0.0)),
      right_(neumann_left(setup) ? BoundaryCondition::dirichlet(0.0) : BoundaryCondition::neumann()) {
    if (n_steps < 2) {
        throw ConfigError("sensitivity time grids need at least 2 steps");
    }
}

BoundaryEnd SensitivityContext::observation_end() const noexcept {
    return neumann_left(setup_) ? BoundaryEnd::Left : BoundaryEnd::Right;
}

ScalarField SensitivityContext::initial_value() const {
    const double k = 0.5 * std::numbers::pi;
    if (neumann_left(setup_)) {
        return ScalarField::from_function(grid_, [k](double x) { return std::cos(k * x); });
    }
    return ScalarField::from_function(grid_, [k](double x) { return std::sin(k * x); });
}

void SensitivityContext::prepare() {
    if (base_) {
        return;
    }
    const std::vector<double> ones(grid_.size(), 1.0);
    const DiffusionOperator op(ones, grid_.dx(), left_, right_);
    const ScalarField u0 = initial_value();
    base_.emplace(integrate_crank_nicolson(op, grid_, timegrid_, u0.values(), {}, {}));
}

const StateHistory& SensitivityContext::base() const {
    if (!base_) {
        throw UsageError("sensitivity base state requested before prepare()");
    }
    return *base_;
}

TimeSeries SensitivityContext::trace_for(std::span<const double> a,
                                         std::span<const double> q) const {
    if (a.size() != grid_.size() || (!q.empty() && q.size() != grid_.size())) {
        throw ConfigError("coefficient sizes do not match the sensitivity grid");
    }
    const DiffusionOperator op(a, grid_.dx(), left_, right_, q);
    const ScalarField u0 = initial_value();
    const StateHistory s = integrate_crank_nicolson(op, grid_, timegrid_, u0.values(), {}, {});
    return trace_at(s, observation_end());
}

TimeSeries sensitivity_solve(const SensitivityContext& ctx, SensitivityMode mode,
                             std::span<const double> delta) {
    const StateHistory& base = ctx.base();
    const SpatialGrid& grid = ctx.grid();
    if (delta.size() != grid.size()) {
        throw ConfigError("perturbation size does not match the sensitivity grid");
    }
    const std::vector<double> ones(grid.size(), 1.0);
    const DiffusionOperator op(ones, grid.dx(), ctx.bc_left(), ctx.bc_right());

    NodalSource source;
    if (mode == SensitivityMode::DiffusionA) {
        // The operator is linear in a, so its derivative along delta is A(delta).
        auto d_op = std::make_shared<DiffusionOperator>(delta, grid.dx(), ctx.bc_left(),
                                                        ctx.bc_right());
        source = [&base, d_op](int k, std::span<double> out) {
            d_op->apply(base.row(static_cast<std::size_t>(k)), out);
        };
    } else {
        source = [&base, delta](int k, std::span<double> out) {
            const auto u = base.row(static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = -delta[i] * u[i];
            }
        };
    }
    const std::vector<double> zero(grid.size(), 0.0);
    const StateHistory w =
        integrate_crank_nicolson(op, grid, ctx.timegrid(), zero, {}, source);
    return trace_at(w, ctx.observation_end());
}

TimeSeries sensitivity_solve(const SensitivityContext& ctx, SensitivityMode mode, int n) {
    const double k = n * std::numbers::pi;
    const ScalarField delta =
        ScalarField::from_function(ctx.grid(), [k](double x) { return std::sin(k * x); });
    return sensitivity_solve(ctx, mode, delta.values());
}

std::vector<std::vector<double>> jacobian_columns(const SensitivityContext& ctx,
                                                  SensitivityMode mode, int jobs) {
    const auto n_modes = static_cast<std::size_t>(ctx.setup().n_modes);
    const double w = ctx.setup().raw ? 1.0 : std::sqrt(ctx.timegrid().dt());
    return parallel_map(n_modes, jobs, [&](std::size_t j) {
        const TimeSeries tr = sensitivity_solve(ctx, mode, static_cast<int>(j) + 1);
        std::vector<double> c(tr.values().begin() + 1, tr.values().end());
        for (double& v : c) {
            v *= w;
        }
        return c;
    });
}

std::vector<double> singular_values(const std::vector<std::vector<double>>& columns) {
    if (columns.empty()) {
        return {};
    }
    const auto rows = static_cast<Eigen::Index>(columns.front().size());
    Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
        if (static_cast<Eigen::Index>(columns[j].size()) != rows) {
            throw ConfigError("Jacobian columns differ in length");
        }
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, static_cast<Eigen::Index>(j)) = columns[j][static_cast<std::size_t>(i)];
        }
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    std::vector<double> out(s.data(), s.data() + s.size());
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

std::vector<double> jacobian_singular_values(const SensitivityContext& ctx,
                                             SensitivityMode mode, int jobs) {
    return singular_values(jacobian_columns(ctx, mode, jobs));
}

double log10_decay_slope(std::span<const double> sigma) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i] > 0.0) {
            xs.push_back(static_cast<double>(i + 1));
            ys.push_back(std::log10(sigma[i]));
        }
    }
    if (xs.size() < 2) {
        throw DegenerateDataError("decay slope needs at least two positive singular values");
    }
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_singular_values_csv(std::span<const double> sigma, std::ostream& out) {
    CsvTable t;
    t.columns = {"n", "sigma", "log10_sigma"};
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        t.rows.push_back({static_cast<double>(i + 1), sigma[i], std::log10(sigma[i])});
    }
    t.write(out);
}

}  // namespace rdinv
