#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rdinv/core_types.hpp"

namespace rdinv {

/// Solution history; row k holds u(., t_k).
class StateHistory {
public:
    /// `neumann_ends` flags ends that carry a homogeneous Neumann condition.
    StateHistory(SpatialGrid grid, TimeGrid timegrid, std::vector<double> values,
                 std::array<bool, 2> neumann_ends = {false, false});

    const SpatialGrid& grid() const noexcept { return grid_; }
    const TimeGrid& timegrid() const noexcept { return timegrid_; }
    std::size_t n_rows() const noexcept { return timegrid_.size(); }
    std::size_t n_cols() const noexcept { return grid_.size(); }
    std::span<const double> row(std::size_t k) const {
        return std::span<const double>(values_).subspan(k * n_cols(), n_cols());
    }
    double operator()(std::size_t k, std::size_t i) const { return values_[k * n_cols() + i]; }
    std::span<const double> data() const noexcept { return values_; }
    bool homogeneous_neumann(BoundaryEnd end) const noexcept {
        return neumann_ends_[end == BoundaryEnd::Left ? 0 : 1];
    }

private:
    SpatialGrid grid_;
    TimeGrid timegrid_;
    std::vector<double> values_;
    std::array<bool, 2> neumann_ends_;
};

/// Second-order discretization of the linear part of the problem,
///   (A u)_i = [a_{i+1/2}(u_{i+1} - u_i) - a_{i-1/2}(u_i - u_{i-1})] / dx^2 - q_i u_i,
/// with arithmetic face means and ghost nodes at impedance ends. The ghost
/// face coefficient is the linear extrapolation (3 a_0 - a_1) / 2. Dirichlet
/// rows are identity rows handled by the integrator.
class DiffusionOperator {
public:
    DiffusionOperator(std::span<const double> a, double dx, const BoundaryCondition& left,
                      const BoundaryCondition& right, std::span<const double> potential = {});

    std::size_t size() const noexcept { return diag_.size(); }
    /// out = A u for the homogeneous part (boundary data excluded).
    void apply(std::span<const double> u, std::span<double> out) const;
    /// Affine contribution of the impedance data b at time t (rows 0 and N).
    void add_boundary_terms(double t, std::span<double> out) const;

    const BoundaryCondition& left() const noexcept { return left_; }
    const BoundaryCondition& right() const noexcept { return right_; }
    std::span<const double> lower() const noexcept { return lower_; }
    std::span<const double> diag() const noexcept { return diag_; }
    std::span<const double> upper() const noexcept { return upper_; }

private:
    BoundaryCondition left_;
    BoundaryCondition right_;
    std::vector<double> lower_;  // lower_[i] couples row i to i-1
    std::vector<double> diag_;
    std::vector<double> upper_;  // upper_[i] couples row i to i+1
    double left_data_coeff_ = 0.0;
    double right_data_coeff_ = 0.0;
};

/// Pointwise reaction term R(u_i, i) added to the right-hand side.
using NodalReaction = std::function<double(double u, std::size_t node)>;
/// Fills the source term at time level k.
using NodalSource = std::function<void(int k, std::span<double> out)>;

struct PicardSettings {
    double tolerance = 1e-12;
    int max_iterations = 25;
};

/// Crank-Nicolson integration of u_t = A u + R(u) + s with Picard iteration
/// on the reaction term at the new time level.
StateHistory integrate_crank_nicolson(const DiffusionOperator& op, const SpatialGrid& grid,
                                      const TimeGrid& timegrid, std::span<const double> u0,
                                      const NodalReaction& reaction, const NodalSource& source,
                                      const PicardSettings& picard = {});

StateHistory solve_forward(const ProblemSpec& problem, const PicardSettings& picard = {});

/// One-sided second-order backward difference at t = T.
ScalarField time_derivative_at_T(const StateHistory& s);

/// u_xx at a homogeneous Neumann end via the mirrored ghost node.
TimeSeries boundary_second_derivative(const StateHistory& s, BoundaryEnd end);

ScalarField final_profile(const StateHistory& s);
TimeSeries trace_at(const StateHistory& s, BoundaryEnd end);

/// Header `# L=<v> T=<v> n_cells=<v> n_steps=<v>`, then one row per time level.
void write_history_csv(const StateHistory& s, std::ostream& out);
void write_history_csv(const StateHistory& s, const std::string& path);

}  // namespace rdinv
