#include "rdinv/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace rdinv {

namespace {

std::string describe_range(double u, double lo, double hi) {
    std::ostringstream os;
    os.precision(10);
    os << "reaction curve evaluated at u=" << u << " outside J=[" << lo << ", " << hi << "]";
    return os.str();
}

std::string describe_blow_up(int step, int node) {
    std::ostringstream os;
    os << "forward solve produced a non-finite value at time step " << step << ", node " << node;
    return os.str();
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

RangeViolation::RangeViolation(double u, double lo, double hi)
    : Error(describe_range(u, lo, hi)), u_(u), lo_(lo), hi_(hi) {}

BlowUpError::BlowUpError(int step, int node)
    : Error(describe_blow_up(step, node)), step_(step), node_(node) {}

SpatialGrid::SpatialGrid(double length, int n_cells)
    : length_(length), n_cells_(n_cells), dx_(0.0) {
    if (!(length > 0.0) || !std::isfinite(length)) {
        throw ConfigError("spatial grid length must be positive and finite");
    }
    if (n_cells < 4) {
        throw ConfigError("spatial grid needs at least 4 cells");
    }
    dx_ = length / n_cells;
    nodes_.resize(static_cast<std::size_t>(n_cells) + 1);
    for (int i = 0; i <= n_cells; ++i) {
        nodes_[i] = i * dx_;
    }
    nodes_.back() = length;
}

SpatialGrid make_uniform_grid(double length, int n_cells) {
    return SpatialGrid(length, n_cells);
}

TimeGrid::TimeGrid(double horizon, int n_steps) : horizon_(horizon), n_steps_(n_steps), dt_(0.0) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw ConfigError("time horizon must be positive and finite");
    }
    if (n_steps < 4) {
        throw ConfigError("time grid needs at least 4 steps");
    }
    dt_ = horizon / n_steps;
}

std::vector<double> TimeGrid::times() const {
    std::vector<double> t(size());
    for (int k = 0; k <= n_steps_; ++k) {
        t[k] = time(k);
    }
    return t;
}

namespace {

double interpolate_uniform(std::span<const double> values, double origin, double spacing,
                           double x) {
    const auto last = values.size() - 1;
    const double s = (x - origin) / spacing;
    if (!(s > 0.0)) {
        return values.front();
    }
    if (s >= static_cast<double>(last)) {
        return values.back();
    }
    const auto i = static_cast<std::size_t>(s);
    const double w = s - static_cast<double>(i);
    return (1.0 - w) * values[i] + w * values[i + 1];
}

}  // namespace

ScalarField::ScalarField(SpatialGrid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
        throw ConfigError("scalar field size does not match its grid");
    }
    if (!all_finite(values_)) {
        throw ConfigError("scalar field contains non-finite values");
    }
}

ScalarField ScalarField::from_function(const SpatialGrid& grid,
                                       const std::function<double(double)>& fn) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = fn(grid.node(i));
    }
    return ScalarField(grid, std::move(v));
}

ScalarField ScalarField::constant(const SpatialGrid& grid, double value) {
    return ScalarField(grid, std::vector<double>(grid.size(), value));
}

double ScalarField::interpolate(double x) const {
    return interpolate_uniform(values_, 0.0, grid_.dx(), x);
}

TimeSeries::TimeSeries(TimeGrid timegrid, std::vector<double> values)
    : timegrid_(timegrid), values_(std::move(values)) {
    if (values_.size() != timegrid_.size()) {
        throw ConfigError("time series size does not match its time grid");
    }
    if (!all_finite(values_)) {
        throw ConfigError("time series contains non-finite values");
    }
}

TimeSeries TimeSeries::from_function(const TimeGrid& timegrid,
                                     const std::function<double(double)>& fn) {
    std::vector<double> v(timegrid.size());
    for (int k = 0; k <= timegrid.n_steps(); ++k) {
        v[k] = fn(timegrid.time(k));
    }
    return TimeSeries(timegrid, std::move(v));
}

double TimeSeries::interpolate(double t) const {
    return interpolate_uniform(values_, 0.0, timegrid_.dt(), t);
}

// ---------------------------------------------------------------------------
// ReactionCurve

ReactionCurve::ReactionCurve(double j_lo, double j_hi, std::vector<double> nodal_values,
                             ClampPolicy policy)
    : values_(std::move(nodal_values)), policy_(policy), uniform_(true) {
    if (!(j_lo < j_hi) || !std::isfinite(j_lo) || !std::isfinite(j_hi)) {
        throw ConfigError("reaction curve interval must satisfy j_lo < j_hi");
    }
    const auto m = values_.size();
    if (m < 2) {
        throw ConfigError("reaction curve needs at least two knots");
    }
    if (!all_finite(values_)) {
        throw ConfigError("reaction curve has non-finite nodal values");
    }
    knots_.resize(m);
    const double h = (j_hi - j_lo) / static_cast<double>(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
        knots_[i] = j_lo + static_cast<double>(i) * h;
    }
    knots_.back() = j_hi;
    inv_spacing_ = 1.0 / h;
}

ReactionCurve::ReactionCurve(std::vector<double> knots, std::vector<double> nodal_values,
                             ClampPolicy policy)
    : knots_(std::move(knots)), values_(std::move(nodal_values)), policy_(policy), uniform_(false) {
    if (knots_.size() < 2 || knots_.size() != values_.size()) {
        throw ConfigError("reaction curve needs at least two knots and one value per knot");
    }
    for (std::size_t i = 1; i < knots_.size(); ++i) {
        if (!(knots_[i] > knots_[i - 1])) {
            throw ConfigError("reaction curve knots must be strictly increasing");
        }
    }
    if (!all_finite(knots_) || !all_finite(values_)) {
        throw ConfigError("reaction curve has non-finite knots or values");
    }
}

ReactionCurve ReactionCurve::sampled(double j_lo, double j_hi, int n_knots,
                                     const std::function<double(double)>& fn,
                                     ClampPolicy policy) {
    if (n_knots < 2) {
        throw ConfigError("reaction curve needs at least two knots");
    }
    std::vector<double> v(static_cast<std::size_t>(n_knots));
    const double h = (j_hi - j_lo) / (n_knots - 1);
    for (int i = 0; i < n_knots; ++i) {
        v[i] = fn(i == n_knots - 1 ? j_hi : j_lo + i * h);
    }
    return ReactionCurve(j_lo, j_hi, std::move(v), policy);
}

ReactionCurve ReactionCurve::constant(double j_lo, double j_hi, int n_knots, double value,
                                      ClampPolicy policy) {
    return ReactionCurve(j_lo, j_hi, std::vector<double>(static_cast<std::size_t>(n_knots), value),
                         policy);
}

double ReactionCurve::operator()(double u) const {
    const double lo = knots_.front();
    const double hi = knots_.back();
    if (u < lo || u > hi) {
        if (std::isnan(u)) {
            throw RangeViolation(u, lo, hi);
        }
        const double slack = kClampSlack * (hi - lo);
        const bool near = u >= lo - slack && u <= hi + slack;
        if (!near) {
            if (policy_ == ClampPolicy::ErrorOutside) {
                throw RangeViolation(u, lo, hi);
            }
            counter_.increment();
        }
        return u < lo ? values_.front() : values_.back();
    }
    std::size_t i;
    if (uniform_) {
        i = static_cast<std::size_t>((u - lo) * inv_spacing_);
        if (i >= knots_.size() - 1) {
            i = knots_.size() - 2;
        }
    } else {
        const auto it = std::upper_bound(knots_.begin(), knots_.end(), u);
        i = static_cast<std::size_t>(std::distance(knots_.begin(), it));
        i = i == 0 ? 0 : std::min(i - 1, knots_.size() - 2);
    }
    const double w = (u - knots_[i]) / (knots_[i + 1] - knots_[i]);
    return (1.0 - w) * values_[i] + w * values_[i + 1];
}

double eval_reaction(const ReactionCurve& f, double u) { return f(u); }

ReactionCurve ReactionCurve::with_values(std::vector<double> nodal_values) const {
    if (nodal_values.size() != knots_.size()) {
        throw ConfigError("reaction curve value count does not match knot count");
    }
    if (uniform_) {
        return ReactionCurve(knots_.front(), knots_.back(), std::move(nodal_values), policy_);
    }
    return ReactionCurve(knots_, std::move(nodal_values), policy_);
}

ReactionCurve ReactionCurve::resampled(double lo, double hi, int n_knots) const {
    // Evaluate without touching this curve's counter.
    ReactionCurve probe = *this;
    probe.policy_ = ClampPolicy::ClampToEndpoints;
    return sampled(lo, hi, n_knots, [&](double u) { return probe(u); }, policy_);
}

// ---------------------------------------------------------------------------
// BoundaryCondition

BoundaryCondition::BoundaryCondition(BoundaryKind kind, double gamma,
                                     std::function<double(double)> rhs,
                                     std::optional<double> constant)
    : kind_(kind), gamma_(gamma), rhs_(std::move(rhs)), constant_(constant) {
    if (kind_ == BoundaryKind::Impedance && (!(gamma_ >= 0.0) || !std::isfinite(gamma_))) {
        throw ConfigError("impedance coefficient gamma must be finite and nonnegative");
    }
    if (!constant_ && !rhs_) {
        throw ConfigError("boundary condition needs a right-hand side");
    }
}

BoundaryCondition BoundaryCondition::impedance(double gamma, double b) {
    return BoundaryCondition(BoundaryKind::Impedance, gamma, {}, b);
}

BoundaryCondition BoundaryCondition::impedance(double gamma, std::function<double(double)> b) {
    return BoundaryCondition(BoundaryKind::Impedance, gamma, std::move(b), std::nullopt);
}

BoundaryCondition BoundaryCondition::dirichlet(double b) {
    return BoundaryCondition(BoundaryKind::Dirichlet, 0.0, {}, b);
}

BoundaryCondition BoundaryCondition::dirichlet(std::function<double(double)> b) {
    return BoundaryCondition(BoundaryKind::Dirichlet, 0.0, std::move(b), std::nullopt);
}

// ---------------------------------------------------------------------------
// ProblemSpec

ProblemSpec::ProblemSpec(SpatialGrid grid, TimeGrid timegrid, ScalarField a, ReactionCurve f,
                         Forcing forcing, ScalarField u0, BoundaryCondition bc_left,
                         BoundaryCondition bc_right, double a_min)
    : grid_(std::move(grid)),
      timegrid_(timegrid),
      a_(std::move(a)),
      f_(std::move(f)),
      forcing_(std::move(forcing)),
      u0_(std::move(u0)),
      bc_left_(std::move(bc_left)),
      bc_right_(std::move(bc_right)),
      a_min_(a_min) {
    validate();
}

void ProblemSpec::validate() const {
    if (!(a_min_ > 0.0)) {
        throw ConfigError("a_min must be positive");
    }
    if (!(a_.grid() == grid_) || !(u0_.grid() == grid_)) {
        throw ConfigError("coefficient and initial value must live on the problem grid");
    }
    if (shift_ && !(shift_->grid() == grid_)) {
        throw ConfigError("reaction shift must live on the problem grid");
    }
    const double amin = *std::min_element(a_.values().begin(), a_.values().end());
    if (!(amin > 0.0) || amin < a_min_) {
        std::ostringstream os;
        os << "diffusion coefficient must be positive: min a = " << amin << " < a_min = " << a_min_;
        throw ConfigError(os.str());
    }
    if (!forcing_) {
        throw ConfigError("problem needs a forcing function (use zero forcing if none)");
    }
    const auto check_dirichlet = [&](const BoundaryCondition& bc, double u0_end, const char* side) {
        if (bc.kind() == BoundaryKind::Dirichlet && std::abs(bc.value(0.0) - u0_end) > 1e-8) {
            std::ostringstream os;
            os << "initial value is incompatible with the " << side
               << " Dirichlet condition at t=0: u0=" << u0_end << ", b(0)=" << bc.value(0.0);
            throw ConfigError(os.str());
        }
    };
    check_dirichlet(bc_left_, u0_.values().front(), "left");
    check_dirichlet(bc_right_, u0_.values().back(), "right");
}

ScalarField ProblemSpec::forcing_at(double t) const {
    return ScalarField::from_function(grid_, [&](double x) { return forcing_(x, t); });
}

ProblemSpec ProblemSpec::with_coefficients(ScalarField a, ReactionCurve f) const {
    ProblemSpec p = *this;
    p.a_ = std::move(a);
    p.f_ = std::move(f);
    p.validate();
    return p;
}

ProblemSpec ProblemSpec::with_forcing(Forcing forcing) const {
    ProblemSpec p = *this;
    p.forcing_ = std::move(forcing);
    p.validate();
    return p;
}

ProblemSpec ProblemSpec::with_initial_value(ScalarField u0) const {
    ProblemSpec p = *this;
    p.u0_ = std::move(u0);
    p.validate();
    return p;
}

ProblemSpec ProblemSpec::with_reaction_shift(std::optional<ScalarField> shift) const {
    ProblemSpec p = *this;
    p.shift_ = std::move(shift);
    p.validate();
    return p;
}

void ObservationSet::validate() const {
    if (!g && !h) {
        throw ConfigError("observation set needs a final-time profile or a time trace");
    }
    if (!(noise_level >= 0.0)) {
        throw ConfigError("noise level must be nonnegative");
    }
}

}  // namespace rdinv
