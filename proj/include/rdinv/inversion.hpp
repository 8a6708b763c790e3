#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rdinv/core_types.hpp"
#include "rdinv/forward_solver.hpp"

namespace rdinv {

enum class Scheme { TwoFinalSequential, TwoFinalWronskian, FinalPlusTrace };

struct SchemeConfig {
    Scheme scheme = Scheme::FinalPlusTrace;
    int max_outer = 10;
    int max_f_inner = 30;
    double tol_outer = 1e-8;
    double tol_inner = 1e-10;
    double mu_floor = 1e-6;     // minimum admissible g'
    double delta_floor = 1e-6;  // minimum admissible |h'| and |g_v'| in the substitution
    double kappa_warn = 0.99;
    double a_floor = 1e-6;
    double w_floor = 1e-8;
    /// Nodes next to an end whose slope is below this fraction of max g' form an
    /// end layer where a is filled instead of divided out (g' vanishes at a
    /// zero-flux end).
    double end_layer_fraction = 0.005;
    int n_knots = ReactionCurve::kDefaultKnots;
    /// Known value of a at `anchor_end`.
    std::optional<double> a_anchor;
    BoundaryEnd anchor_end = BoundaryEnd::Right;
    /// Known fluxes (a u_x) at the final time for Dirichlet ends, per data run.
    std::optional<double> flux_left_u, flux_right_u, flux_left_v, flux_right_v;

    void validate() const;
};

struct ValueRange {
    double lo = 0.0;
    double hi = 0.0;
    double width() const noexcept { return hi - lo; }
    bool contains(const ValueRange& other, double tol) const noexcept {
        return other.lo >= lo - tol && other.hi <= hi + tol;
    }
};

struct ConditionReport {
    double min_gu_slope = 0.0;  // over nodes outside the end layers
    double raw_min_gu_slope = 0.0;
    std::optional<double> min_gv_slope;
    std::optional<double> min_abs_h_slope;
    std::optional<double> kappa;
    ValueRange range_u;
    std::optional<ValueRange> range_v;
    std::optional<ValueRange> range_h;
    bool range_contained = true;
    std::vector<std::string> warnings;
};

/// Monotonicity, slope and range checks for the chosen scheme. Hard floors raise
/// ConditionViolation; everything else lands in `warnings`.
ConditionReport check_conditions(const ScalarField& g_u, const ScalarField* g_v,
                                 const TimeSeries* h, const SchemeConfig& cfg);

/// Counters filled by the a-updates.
struct UpdateDiagnostics {
    std::size_t clipped = 0;  // nodes raised to a_floor
    std::size_t filled = 0;   // nodes filled by interpolation or anchoring
};

/// Flux (a u_x)(end, T) of a data run implied by its boundary condition, or the
/// configured value at a Dirichlet end.
std::optional<double> boundary_flux(const BoundaryCondition& bc, BoundaryEnd end, double g_end,
                                    double horizon, const std::optional<double>& configured);

/// a = Phi / g_u' with Phi' = u_t - f_k(g_u) - r_u and Phi fixed by a boundary flux.
ScalarField update_a_sequential(const ScalarField& u_t_T, const ReactionCurve& f_k,
                                const ScalarField& g_u, const ScalarField& r_u_T,
                                const BoundaryCondition& bc_left,
                                const BoundaryCondition& bc_right, double horizon,
                                const SchemeConfig& cfg, UpdateDiagnostics* diag = nullptr);

/// f(g_v(x)) = v_t - r_v - (a g_v')' rebinned onto the knots of `layout`; knots outside
/// range(g_v) keep the values of `layout`.
ReactionCurve update_f_sequential(const ScalarField& v_t_T, const ScalarField& a_next,
                                  const ScalarField& g_v, const ScalarField& r_v_T,
                                  const ReactionCurve& layout);

/// a from -(a W)' = psi with W = g_u g_v' - g_v g_u'.
ScalarField update_a_wronskian(const ScalarField& u_t_T, const ScalarField& v_t_T,
                               const ReactionCurve& f_k, const ScalarField& g_u,
                               const ScalarField& g_v, const ScalarField& r_u_T,
                               const ScalarField& r_v_T, const ProblemSpec& skeleton_u,
                               const ProblemSpec& skeleton_v, const SchemeConfig& cfg,
                               UpdateDiagnostics* diag = nullptr);

struct SubstitutionResult {
    ReactionCurve f;
    std::vector<double> sweep_changes;  // sup-norm change of each sweep
    double kappa_estimate = 0.0;
    bool converged = false;
};

/// Solves f(g_u) g_v' - f(g_v) g_u' = phi_tilde by successive substitution
///   f_{j+1}(g_u(x)) = [f_j(g_v(x)) g_u'(x) + phi_tilde(x)] / g_v'(x),
/// starting from `start` and keeping its knots. Each sweep overwrites the values at
/// g_u(x_i) in ascending order, so later nodes already see the current sweep. Nodes
/// with |g_v'| < delta_floor keep the previous value; where g_u = g_v the equation
/// is solved for f directly.
SubstitutionResult successive_substitution(const ScalarField& g_u, const ScalarField& g_v,
                                           const std::vector<double>& phi_tilde,
                                           const ReactionCurve& start, const SchemeConfig& cfg);

SubstitutionResult update_f_wronskian(const ScalarField& u_t_T, const ScalarField& v_t_T,
                                      const ScalarField& a_next, const ScalarField& g_u,
                                      const ScalarField& g_v, const ScalarField& r_u_T,
                                      const ScalarField& r_v_T, const ReactionCurve& start,
                                      const SchemeConfig& cfg);

/// f(h(t)) = h_t - r(x~, t) - a_end u_xx(x~, t) rebinned onto the knots of `layout`.
ReactionCurve update_f_trace(const TimeSeries& h, const TimeSeries& h_dot,
                             const TimeSeries& r_at_end, double a_at_end,
                             const TimeSeries& uxx_at_end, const ReactionCurve& layout);

/// Smoothed-data derivative h_t: centered inside, one-sided second order at the ends.
TimeSeries differentiate(const TimeSeries& h);

/// Data of one reconstruction. g_v is required by the two-final schemes, h by FinalPlusTrace.
struct ReconstructionData {
    ScalarField g_u;
    std::optional<ScalarField> g_v;
    std::optional<TimeSeries> h;
    BoundaryEnd trace_end = BoundaryEnd::Right;
};

struct IterationRecord {
    int k = 0;
    double misfit_g = 0.0;  // sup |u(., T) - g|, maximized over the data runs
    double misfit_h = 0.0;  // sup |u(x~, .) - h|, NaN without a trace
    double da_sup = 0.0;    // NaN at k = 0
    double df_sup = 0.0;
    std::uint64_t clamp_events = 0;
};

struct ReconstructionResult {
    std::vector<IterationRecord> history;
    std::vector<ScalarField> a_iterates;
    std::vector<ReactionCurve> f_iterates;
    ConditionReport conditions;
    std::vector<std::string> warnings;
    bool converged = false;

    const ScalarField& a() const { return a_iterates.back(); }
    const ReactionCurve& f() const { return f_iterates.back(); }
};

/// Raised when a reconstruction aborts; carries the iterates computed so far.
class ReconstructionError : public Error {
public:
    ReconstructionError(const std::string& what, ReconstructionResult partial, bool data_condition)
        : Error(what), partial_(std::move(partial)), data_condition_(data_condition) {}
    const ReconstructionResult& partial() const noexcept { return partial_; }
    /// True when the data failed a condition check before any iteration.
    bool data_condition() const noexcept { return data_condition_; }

private:
    ReconstructionResult partial_;
    bool data_condition_;
};

/// Alternates forward solves with the scheme's a- and f-updates. The skeletons carry
/// grids, forcing, boundary conditions and initial values; their a and f are ignored.
/// The f-iterates live on J = range(h) (FinalPlusTrace) or range(g_u) (two-final schemes).
ReconstructionResult run_reconstruction(const ReconstructionData& data,
                                        const ProblemSpec& skeleton_u,
                                        const ProblemSpec* skeleton_v, const SchemeConfig& cfg,
                                        const ScalarField& a0, const ReactionCurve& f0);

/// Zero initial value, forcing r + (a u0')', and reaction shift u0.
ProblemSpec lift_initial_value(const ProblemSpec& p);

/// Relative discrete L2 error of a against a_ex on the grid.
double relative_l2_error(const ScalarField& a, const std::function<double(double)>& a_ex);
/// Relative L2 error of f against f_ex on the central `fraction` of [lo, hi].
double relative_l2_error(const ReactionCurve& f, const std::function<double(double)>& f_ex,
                         double lo, double hi, double fraction = 0.8);

void write_history_csv(const ReconstructionResult& r, std::ostream& out);
void write_a_csv(const ScalarField& a, std::ostream& out,
                 const std::function<double(double)>& a_ex = {});
void write_f_csv(const ReactionCurve& f, std::ostream& out,
                 const std::function<double(double)>& f_ex = {});

}  // namespace rdinv
