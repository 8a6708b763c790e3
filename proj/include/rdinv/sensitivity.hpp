#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "rdinv/core_types.hpp"
#include "rdinv/forward_solver.hpp"

namespace rdinv {

enum class SensitivityMode { DiffusionA, PotentialQ };

/// Which end carries the zero-flux condition; the trace is observed there and the
/// other end is held at zero.
enum class SensitivityLayout {
    NeumannLeft,   // u_x(0) = 0, u(1) = 0, u0 = cos(pi x / 2), trace u(0, t)
    NeumannRight,  // u(0) = 0, u_x(1) = 0, u0 = sin(pi x / 2), trace u(1, t)
};

struct SensitivitySetup {
    double horizon = 1.0;
    int n_cells = 400;
    std::vector<int> n_steps = {100, 400};
    int n_modes = 20;
    SensitivityLayout layout = SensitivityLayout::NeumannLeft;
    /// Skip the sqrt(dt) quadrature weight on the Jacobian rows.
    bool raw = false;

    void validate() const;
};

const char* to_string(SensitivityMode m) noexcept;
const char* to_string(SensitivityLayout l) noexcept;

/// Base state (a = 1, q = 0, f = 0) on one time grid plus the boundary layout.
/// The base solution is computed on demand by prepare().
class SensitivityContext {
public:
    SensitivityContext(const SensitivitySetup& setup, int n_steps);

    const SpatialGrid& grid() const noexcept { return grid_; }
    const TimeGrid& timegrid() const noexcept { return timegrid_; }
    const SensitivitySetup& setup() const noexcept { return setup_; }
    BoundaryEnd observation_end() const noexcept;
    const BoundaryCondition& bc_left() const noexcept { return left_; }
    const BoundaryCondition& bc_right() const noexcept { return right_; }
    ScalarField initial_value() const;

    void prepare();
    bool prepared() const noexcept { return base_.has_value(); }
    /// Throws UsageError before prepare().
    const StateHistory& base() const;

    /// Trace of the nonlinear map for coefficients a and potential q (same layout).
    TimeSeries trace_for(std::span<const double> a, std::span<const double> q) const;

private:
    SensitivitySetup setup_;
    SpatialGrid grid_;
    TimeGrid timegrid_;
    BoundaryCondition left_;
    BoundaryCondition right_;
    std::optional<StateHistory> base_;
};

/// Trace of the linearized solution for the perturbation `delta` (nodal values).
/// It is the exact derivative of the discrete map, so finite differences of
/// trace_for converge to it at O(eps).
TimeSeries sensitivity_solve(const SensitivityContext& ctx, SensitivityMode mode,
                             std::span<const double> delta);
/// Same with delta = sin(n pi x).
TimeSeries sensitivity_solve(const SensitivityContext& ctx, SensitivityMode mode, int n);

/// Columns hold the trace of each basis mode at t_1 .. t_N, weighted by sqrt(dt)
/// unless the setup asks for raw values.
std::vector<std::vector<double>> jacobian_columns(const SensitivityContext& ctx,
                                                  SensitivityMode mode, int jobs = 1);

/// Singular values of the matrix with the given columns, descending.
std::vector<double> singular_values(const std::vector<std::vector<double>>& columns);

std::vector<double> jacobian_singular_values(const SensitivityContext& ctx, SensitivityMode mode,
                                             int jobs = 1);

/// Least-squares slope of log10 sigma_n against n.
double log10_decay_slope(std::span<const double> sigma);

/// `n,sigma,log10_sigma`
void write_singular_values_csv(std::span<const double> sigma, std::ostream& out);

}  // namespace rdinv
