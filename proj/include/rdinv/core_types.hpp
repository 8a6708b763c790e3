#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rdinv/errors.hpp"

namespace rdinv {

/// Uniform grid on (0, L) with n_cells cells and n_cells + 1 nodes.
class SpatialGrid {
public:
    SpatialGrid(double length, int n_cells);

    double length() const noexcept { return length_; }
    int n_cells() const noexcept { return n_cells_; }
    double dx() const noexcept { return dx_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double node(std::size_t i) const { return nodes_[i]; }
    std::span<const double> nodes() const noexcept { return nodes_; }

    friend bool operator==(const SpatialGrid& a, const SpatialGrid& b) noexcept {
        return a.length_ == b.length_ && a.n_cells_ == b.n_cells_;
    }

private:
    double length_;
    int n_cells_;
    double dx_;
    std::vector<double> nodes_;
};

SpatialGrid make_uniform_grid(double length, int n_cells);

/// Uniform time levels t_k = k * dt on [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, int n_steps);

    double horizon() const noexcept { return horizon_; }
    int n_steps() const noexcept { return n_steps_; }
    double dt() const noexcept { return dt_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(n_steps_) + 1; }
    double time(int k) const noexcept { return k == n_steps_ ? horizon_ : k * dt_; }
    std::vector<double> times() const;

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
        return a.horizon_ == b.horizon_ && a.n_steps_ == b.n_steps_;
    }

private:
    double horizon_;
    int n_steps_;
    double dt_;
};

/// Nodal samples of a spatial function.
class ScalarField {
public:
    ScalarField(SpatialGrid grid, std::vector<double> values);

    static ScalarField from_function(const SpatialGrid& grid,
                                     const std::function<double(double)>& fn);
    static ScalarField constant(const SpatialGrid& grid, double value);

    const SpatialGrid& grid() const noexcept { return grid_; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& vector() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Piecewise-linear evaluation, constant beyond the ends.
    double interpolate(double x) const;

private:
    SpatialGrid grid_;
    std::vector<double> values_;
};

/// Samples of a function of time on a TimeGrid.
class TimeSeries {
public:
    TimeSeries(TimeGrid timegrid, std::vector<double> values);

    static TimeSeries from_function(const TimeGrid& timegrid,
                                    const std::function<double(double)>& fn);

    const TimeGrid& timegrid() const noexcept { return timegrid_; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& vector() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    double interpolate(double t) const;

private:
    TimeGrid timegrid_;
    std::vector<double> values_;
};

enum class ClampPolicy { ClampToEndpoints, ErrorOutside };

/// Copyable atomic event counter; copies carry the current count.
class ClampCounter {
public:
    ClampCounter() = default;
    ClampCounter(const ClampCounter& other) noexcept : count_(other.get()) {}
    ClampCounter& operator=(const ClampCounter& other) noexcept {
        count_.store(other.get(), std::memory_order_relaxed);
        return *this;
    }

    void increment() const noexcept { count_.fetch_add(1, std::memory_order_relaxed); }
    std::uint64_t get() const noexcept { return count_.load(std::memory_order_relaxed); }
    void reset() const noexcept { count_.store(0, std::memory_order_relaxed); }

private:
    mutable std::atomic<std::uint64_t> count_{0};
};

/// Piecewise-linear representation of the reaction term f on J = [j_lo, j_hi].
///
/// Arguments outside J are either clamped to the end values (each such
/// evaluation is counted) or rejected with RangeViolation. Excursions closer
/// than kClampSlack * |J| to the interval are clamped silently: they are the
/// size of discretization and smoothing error, not range violations.
class ReactionCurve {
public:
    static constexpr double kClampSlack = 1e-6;
    static constexpr int kDefaultKnots = 201;

    /// Uniform knots over [j_lo, j_hi]; one nodal value per knot.
    ReactionCurve(double j_lo, double j_hi, std::vector<double> nodal_values,
                  ClampPolicy policy = ClampPolicy::ClampToEndpoints);

    /// Arbitrary strictly increasing knots.
    ReactionCurve(std::vector<double> knots, std::vector<double> nodal_values,
                  ClampPolicy policy = ClampPolicy::ClampToEndpoints);

    static ReactionCurve sampled(double j_lo, double j_hi, int n_knots,
                                 const std::function<double(double)>& fn,
                                 ClampPolicy policy = ClampPolicy::ClampToEndpoints);
    static ReactionCurve constant(double j_lo, double j_hi, int n_knots, double value,
                                  ClampPolicy policy = ClampPolicy::ClampToEndpoints);

    double operator()(double u) const;

    double j_lo() const noexcept { return knots_.front(); }
    double j_hi() const noexcept { return knots_.back(); }
    std::span<const double> knots() const noexcept { return knots_; }
    std::span<const double> nodal_values() const noexcept { return values_; }
    std::size_t size() const noexcept { return knots_.size(); }
    ClampPolicy policy() const noexcept { return policy_; }
    bool uniform() const noexcept { return uniform_; }

    std::uint64_t clamp_count() const noexcept { return counter_.get(); }
    void reset_clamp_count() const noexcept { counter_.reset(); }

    /// Same knots and policy, new nodal values (counter starts at zero).
    ReactionCurve with_values(std::vector<double> nodal_values) const;
    /// Same policy, resampled onto uniform knots over [lo, hi].
    ReactionCurve resampled(double lo, double hi, int n_knots) const;

private:
    std::vector<double> knots_;
    std::vector<double> values_;
    ClampPolicy policy_;
    bool uniform_;
    double inv_spacing_ = 0.0;
    ClampCounter counter_;
};

double eval_reaction(const ReactionCurve& f, double u);

enum class BoundaryKind { Impedance, Dirichlet };
enum class BoundaryEnd { Left, Right };

/// a * du/dn + gamma * u = b(t) (Impedance, outward normal) or u = b(t).
class BoundaryCondition {
public:
    static BoundaryCondition impedance(double gamma, double b);
    static BoundaryCondition impedance(double gamma, std::function<double(double)> b);
    static BoundaryCondition neumann() { return impedance(0.0, 0.0); }
    static BoundaryCondition dirichlet(double b);
    static BoundaryCondition dirichlet(std::function<double(double)> b);

    BoundaryKind kind() const noexcept { return kind_; }
    double gamma() const noexcept { return gamma_; }
    double value(double t) const { return constant_ ? *constant_ : rhs_(t); }
    bool is_homogeneous_neumann() const noexcept {
        return kind_ == BoundaryKind::Impedance && gamma_ == 0.0 && constant_ && *constant_ == 0.0;
    }

private:
    BoundaryCondition(BoundaryKind kind, double gamma, std::function<double(double)> rhs,
                      std::optional<double> constant);

    BoundaryKind kind_;
    double gamma_;
    std::function<double(double)> rhs_;
    std::optional<double> constant_;
};

using Forcing = std::function<double(double x, double t)>;

/// Everything a forward solve needs: u_t - (a u_x)_x = f(u + shift) + r(x, t).
///
/// The optional reaction shift is zero for ordinary problems; the lifted
/// problem of a nonzero initial value evaluates f at v + u0(x).
class ProblemSpec {
public:
    static constexpr double kDefaultAMin = 1e-8;

    ProblemSpec(SpatialGrid grid, TimeGrid timegrid, ScalarField a, ReactionCurve f,
                Forcing forcing, ScalarField u0, BoundaryCondition bc_left,
                BoundaryCondition bc_right, double a_min = kDefaultAMin);

    const SpatialGrid& grid() const noexcept { return grid_; }
    const TimeGrid& timegrid() const noexcept { return timegrid_; }
    const ScalarField& a() const noexcept { return a_; }
    const ReactionCurve& f() const noexcept { return f_; }
    const Forcing& forcing() const noexcept { return forcing_; }
    const ScalarField& u0() const noexcept { return u0_; }
    const BoundaryCondition& bc_left() const noexcept { return bc_left_; }
    const BoundaryCondition& bc_right() const noexcept { return bc_right_; }
    const BoundaryCondition& bc(BoundaryEnd end) const noexcept {
        return end == BoundaryEnd::Left ? bc_left_ : bc_right_;
    }
    double a_min() const noexcept { return a_min_; }
    const std::optional<ScalarField>& reaction_shift() const noexcept { return shift_; }

    /// Forcing sampled on the grid at time t.
    ScalarField forcing_at(double t) const;

    ProblemSpec with_coefficients(ScalarField a, ReactionCurve f) const;
    ProblemSpec with_forcing(Forcing forcing) const;
    ProblemSpec with_initial_value(ScalarField u0) const;
    ProblemSpec with_reaction_shift(std::optional<ScalarField> shift) const;

private:
    void validate() const;

    SpatialGrid grid_;
    TimeGrid timegrid_;
    ScalarField a_;
    ReactionCurve f_;
    Forcing forcing_;
    ScalarField u0_;
    BoundaryCondition bc_left_;
    BoundaryCondition bc_right_;
    double a_min_;
    std::optional<ScalarField> shift_;
};

/// Overposed data: final-time profile g and/or boundary trace h.
struct ObservationSet {
    std::optional<ScalarField> g;
    std::optional<TimeSeries> h;
    BoundaryEnd trace_end = BoundaryEnd::Right;
    int n_x_samples = 0;
    int n_t_samples = 0;
    double noise_level = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

}  // namespace rdinv
