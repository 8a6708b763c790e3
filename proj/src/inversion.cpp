#include "rdinv/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <utility>

#include "numerics.hpp"
#include "rdinv/csv.hpp"

namespace rdinv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) { return format_number(v); }

ValueRange range_of(std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return {*lo, *hi};
}

/// Number of nodes at each end whose slope stays below the end-layer threshold.
struct EndLayers {
    std::size_t left = 0;
    std::size_t right = 0;
};

EndLayers end_layers(const std::vector<double>& slope, const SchemeConfig& cfg,
                     const char* what) {
    const double peak = *std::max_element(slope.begin(), slope.end());
    const double threshold = std::max(cfg.mu_floor, cfg.end_layer_fraction * peak);
    const std::size_t n = slope.size();
    EndLayers layers;
    while (layers.left < n && slope[layers.left] < threshold) {
        ++layers.left;
    }
    while (layers.right < n && slope[n - 1 - layers.right] < threshold) {
        ++layers.right;
    }
    const auto limit = static_cast<std::size_t>(0.2 * static_cast<double>(n));
    if (layers.left > limit || layers.right > limit) {
        throw ConditionViolation(std::string("monotonicity violated: ") + what +
                                 " has no usable slope over more than 20% of the domain "
                                 "next to an end");
    }
    return layers;
}

double core_min(const std::vector<double>& v, const EndLayers& layers) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = layers.left; i + layers.right < v.size(); ++i) {
        m = std::min(m, v[i]);
    }
    return m;
}

void require_core_slope(const std::vector<double>& slope, const EndLayers& layers,
                        const SpatialGrid& grid, double floor, const char* what) {
    for (std::size_t i = layers.left; i + layers.right < slope.size(); ++i) {
        if (slope[i] < floor) {
            throw ConditionViolation(std::string("monotonicity violated: ") + what +
                                     "' = " + fmt(slope[i]) + " at x = " + fmt(grid.node(i)) +
                                     " is below the floor " + fmt(floor));
        }
    }
}

/// Fills invalid entries by linear interpolation between valid neighbours and
/// constant extension beyond the outermost valid ones.
std::size_t fill_invalid(std::vector<double>& v, const std::vector<bool>& valid) {
    const std::size_t n = v.size();
    std::vector<std::size_t> good;
    for (std::size_t i = 0; i < n; ++i) {
        if (valid[i]) {
            good.push_back(i);
        }
    }
    if (good.empty()) {
        throw DegenerateDataError("no node carries usable information for the a-update");
    }
    std::size_t filled = 0;
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (valid[i]) {
            continue;
        }
        ++filled;
        while (next < good.size() && good[next] < i) {
            ++next;
        }
        if (next == 0) {
            v[i] = v[good.front()];
        } else if (next == good.size()) {
            v[i] = v[good.back()];
        } else {
            const std::size_t l = good[next - 1];
            const std::size_t r = good[next];
            const double w = static_cast<double>(i - l) / static_cast<double>(r - l);
            v[i] = (1.0 - w) * v[l] + w * v[r];
        }
    }
    return filled;
}

std::size_t clip_below(std::vector<double>& v, double floor) {
    std::size_t clipped = 0;
    for (double& x : v) {
        if (!(x >= floor)) {
            x = floor;
            ++clipped;
        }
    }
    return clipped;
}

void apply_anchor(std::vector<double>& a, std::vector<bool>& valid, const SchemeConfig& cfg) {
    if (cfg.a_anchor) {
        const std::size_t i = cfg.anchor_end == BoundaryEnd::Left ? 0 : a.size() - 1;
        a[i] = *cfg.a_anchor;
        valid[i] = true;
    }
}

void require_increasing(std::span<const double> g, const SpatialGrid& grid, const char* what) {
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        if (!(g[i + 1] > g[i])) {
            throw ConditionViolation(std::string("monotonicity violated: ") + what +
                                     " is not increasing on [" + fmt(grid.node(i)) + ", " +
                                     fmt(grid.node(i + 1)) + "]");
        }
    }
}

/// Linear rebinning of scattered (args, values) onto the knots of `layout`.
ReactionCurve rebin(std::span<const double> args, std::span<const double> values,
                    const ReactionCurve& layout) {
    std::vector<double> out(layout.size());
    const auto knots = layout.knots();
    for (std::size_t m = 0; m < out.size(); ++m) {
        out[m] = detail::interp_linear(args, values, knots[m]);
    }
    return layout.with_values(std::move(out));
}

/// Like rebin, but knots outside the span of `args` keep the values of `layout`.
ReactionCurve rebin_within(std::span<const double> args, std::span<const double> values,
                           const ReactionCurve& layout) {
    const auto [lo, hi] = std::minmax_element(args.begin(), args.end());
    std::vector<double> out(layout.nodal_values().begin(), layout.nodal_values().end());
    const auto knots = layout.knots();
    for (std::size_t m = 0; m < out.size(); ++m) {
        if (knots[m] >= *lo && knots[m] <= *hi) {
            out[m] = detail::interp_linear(args, values, knots[m]);
        }
    }
    return layout.with_values(std::move(out));
}

void require_same_grid(const SpatialGrid& a, const SpatialGrid& b) {
    if (!(a == b)) {
        throw ConfigError("fields live on different grids");
    }
}

}  // namespace

void SchemeConfig::validate() const {
    if (max_outer < 1 || max_f_inner < 1) {
        throw ConfigError("iteration limits must be at least 1");
    }
    if (!(tol_outer > 0.0) || !(tol_inner > 0.0) || !(mu_floor > 0.0) || !(delta_floor > 0.0) ||
        !(a_floor > 0.0) || !(w_floor > 0.0) || !(kappa_warn > 0.0)) {
        throw ConfigError("scheme tolerances and floors must be positive");
    }
    if (!(end_layer_fraction >= 0.0) || !(end_layer_fraction < 1.0)) {
        throw ConfigError("end_layer_fraction must lie in [0, 1)");
    }
    if (n_knots < 2) {
        throw ConfigError("a reaction curve needs at least two knots");
    }
    if (a_anchor && !(*a_anchor > 0.0)) {
        throw ConfigError("a_anchor must be positive");
    }
}

ConditionReport check_conditions(const ScalarField& g_u, const ScalarField* g_v,
                                 const TimeSeries* h, const SchemeConfig& cfg) {
    ConditionReport rep;
    const auto& grid = g_u.grid();
    const auto gup = detail::derivative(g_u.values(), grid.dx());
    rep.raw_min_gu_slope = *std::min_element(gup.begin(), gup.end());
    const EndLayers lu = end_layers(gup, cfg, "g_u");
    rep.min_gu_slope = core_min(gup, lu);
    rep.range_u = range_of(g_u.values());
    require_core_slope(gup, lu, grid, cfg.mu_floor, "g_u");

    const bool two_final = cfg.scheme != Scheme::FinalPlusTrace;
    if (two_final && g_v == nullptr) {
        throw ConfigError("two-final schemes need a second final-time profile g_v");
    }
    if (!two_final && h == nullptr) {
        throw ConfigError("FinalPlusTrace needs a boundary trace h");
    }

    if (g_v != nullptr) {
        require_same_grid(grid, g_v->grid());
        const auto gvp = detail::derivative(g_v->values(), grid.dx());
        const EndLayers lv = end_layers(gvp, cfg, "g_v");
        rep.min_gv_slope = core_min(gvp, lv);
        require_core_slope(gvp, lv, grid, cfg.mu_floor, "g_v");
        double kappa = 0.0;
        for (std::size_t i = lu.left; i + lu.right < gup.size(); ++i) {
            kappa = std::max(kappa, std::abs(gvp[i] / gup[i]));
        }
        rep.kappa = kappa;
        rep.range_v = range_of(g_v->values());
        rep.range_contained = rep.range_u.contains(*rep.range_v, 1e-6 * rep.range_u.width());
        if (two_final && !rep.range_contained) {
            throw ConditionViolation("range condition violated: range(g_v) = [" +
                                     fmt(rep.range_v->lo) + ", " + fmt(rep.range_v->hi) +
                                     "] is not contained in range(g_u) = [" +
                                     fmt(rep.range_u.lo) + ", " + fmt(rep.range_u.hi) + "]");
        }
        if (kappa > cfg.kappa_warn) {
            rep.warnings.push_back("slope ratio estimate kappa = " + fmt(kappa) + " exceeds " +
                                   fmt(cfg.kappa_warn) +
                                   (cfg.scheme == Scheme::TwoFinalWronskian
                                        ? "; the f substitution may not contract"
                                        : ""));
        }
    }

    if (h != nullptr) {
        const auto hdot = differentiate(*h);
        double m = std::numeric_limits<double>::infinity();
        for (double v : hdot.values()) {
            m = std::min(m, std::abs(v));
        }
        rep.min_abs_h_slope = m;
        rep.range_h = range_of(h->values());
        if (cfg.scheme == Scheme::FinalPlusTrace) {
            if (m < cfg.delta_floor) {
                throw ConditionViolation("monotonicity violated: min |h'| = " + fmt(m) +
                                         " is below the floor " + fmt(cfg.delta_floor));
            }
            const double tol = 1e-6 * rep.range_h->width();
            rep.range_contained = rep.range_h->contains(rep.range_u, tol);
            if (!rep.range_contained) {
                rep.warnings.push_back("range(g) = [" + fmt(rep.range_u.lo) + ", " +
                                       fmt(rep.range_u.hi) + "] leaves range(h) = [" +
                                       fmt(rep.range_h->lo) + ", " + fmt(rep.range_h->hi) +
                                       "]; f will be clamped");
            }
        }
    }
    return rep;
}

std::optional<double> boundary_flux(const BoundaryCondition& bc, BoundaryEnd end, double g_end,
                                    double horizon, const std::optional<double>& configured) {
    if (configured) {
        return configured;
    }
    if (bc.kind() == BoundaryKind::Dirichlet) {
        return std::nullopt;
    }
    const double b = bc.value(horizon);
    // a du/dn + gamma u = b with the outward normal: -x at the left end.
    return end == BoundaryEnd::Left ? bc.gamma() * g_end - b : b - bc.gamma() * g_end;
}

ScalarField update_a_sequential(const ScalarField& u_t_T, const ReactionCurve& f_k,
                                const ScalarField& g_u, const ScalarField& r_u_T,
                                const BoundaryCondition& bc_left,
                                const BoundaryCondition& bc_right, double horizon,
                                const SchemeConfig& cfg, UpdateDiagnostics* diag) {
    const auto& grid = g_u.grid();
    require_same_grid(grid, u_t_T.grid());
    require_same_grid(grid, r_u_T.grid());
    const std::size_t n = grid.size();
    const double dx = grid.dx();
    const auto g = g_u.values();
    const auto gp = detail::derivative(g, dx);
    const EndLayers layers = end_layers(gp, cfg, "g_u");
    require_core_slope(gp, layers, grid, cfg.mu_floor, "g_u");

    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) {
        phi[i] = u_t_T[i] - f_k(g[i]) - r_u_T[i];
    }
    const auto flux_l =
        boundary_flux(bc_left, BoundaryEnd::Left, g.front(), horizon, cfg.flux_left_u);
    const auto flux_r =
        boundary_flux(bc_right, BoundaryEnd::Right, g.back(), horizon, cfg.flux_right_u);
    if (!flux_l && !flux_r) {
        throw ConfigError("the boundary flux of the data run is unknown at both ends; "
                          "supply a known flux for a Dirichlet end");
    }
    // Integrate from the end with the flatter profile so Phi and g' vanish together there.
    const bool from_left =
        flux_l && (!flux_r || std::abs(gp.front()) <= std::abs(gp.back()));
    std::vector<double> big_phi;
    if (from_left) {
        big_phi = detail::cumulative_trapezoid(phi, dx);
        for (double& v : big_phi) {
            v += *flux_l;
        }
    } else {
        big_phi = detail::cumulative_trapezoid_from_right(phi, dx);
        for (double& v : big_phi) {
            v = *flux_r - v;
        }
    }

    std::vector<double> a(n, 0.0);
    std::vector<bool> valid(n, false);
    for (std::size_t i = layers.left; i + layers.right < n; ++i) {
        a[i] = big_phi[i] / gp[i];
        valid[i] = true;
    }
    apply_anchor(a, valid, cfg);
    const std::size_t filled = fill_invalid(a, valid);
    const std::size_t clipped = clip_below(a, cfg.a_floor);
    if (diag != nullptr) {
        diag->filled += filled;
        diag->clipped += clipped;
    }
    return ScalarField(grid, std::move(a));
}

ReactionCurve update_f_sequential(const ScalarField& v_t_T, const ScalarField& a_next,
                                  const ScalarField& g_v, const ScalarField& r_v_T,
                                  const ReactionCurve& layout) {
    const auto& grid = g_v.grid();
    require_same_grid(grid, v_t_T.grid());
    require_same_grid(grid, a_next.grid());
    require_same_grid(grid, r_v_T.grid());
    const std::size_t n = grid.size();
    const auto g = g_v.values();
    require_increasing(g, grid, "g_v");
    const auto gp = detail::derivative(g, grid.dx());
    std::vector<double> flux(n);
    for (std::size_t i = 0; i < n; ++i) {
        flux[i] = a_next[i] * gp[i];
    }
    const auto div = detail::derivative(flux, grid.dx());
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = v_t_T[i] - r_v_T[i] - div[i];
    }
    return rebin_within(g, values, layout);
}

ScalarField update_a_wronskian(const ScalarField& u_t_T, const ScalarField& v_t_T,
                               const ReactionCurve& f_k, const ScalarField& g_u,
                               const ScalarField& g_v, const ScalarField& r_u_T,
                               const ScalarField& r_v_T, const ProblemSpec& skeleton_u,
                               const ProblemSpec& skeleton_v, const SchemeConfig& cfg,
                               UpdateDiagnostics* diag) {
    const auto& grid = g_u.grid();
    for (const ScalarField* f : {&u_t_T, &v_t_T, &g_v, &r_u_T, &r_v_T}) {
        require_same_grid(grid, f->grid());
    }
    const std::size_t n = grid.size();
    const double dx = grid.dx();
    const auto gu = g_u.values();
    const auto gv = g_v.values();
    const auto gup = detail::derivative(gu, dx);
    const auto gvp = detail::derivative(gv, dx);

    std::vector<double> psi(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double fu = u_t_T[i] - r_u_T[i] - f_k(gu[i]);
        const double fv = v_t_T[i] - r_v_T[i] - f_k(gv[i]);
        psi[i] = fu * gv[i] - fv * gu[i];
        w[i] = gu[i] * gvp[i] - gv[i] * gup[i];
    }

    // -a W at an end equals flux_u g_v - flux_v g_u; a factor multiplying a
    // vanishing profile value is not needed.
    const double horizon = skeleton_u.timegrid().horizon();
    const double scale = std::max(detail::sup_norm(gu), detail::sup_norm(gv));
    const auto end_constant = [&](BoundaryEnd end) -> std::optional<double> {
        const std::size_t i = end == BoundaryEnd::Left ? 0 : n - 1;
        const bool left = end == BoundaryEnd::Left;
        const auto flux_u = boundary_flux(skeleton_u.bc(end), end, gu[i], horizon,
                                          left ? cfg.flux_left_u : cfg.flux_right_u);
        const auto flux_v = boundary_flux(skeleton_v.bc(end), end, gv[i], horizon,
                                          left ? cfg.flux_left_v : cfg.flux_right_v);
        const double tiny = 1e-14 * scale;
        double c = 0.0;
        if (std::abs(gv[i]) > tiny) {
            if (!flux_u) {
                return std::nullopt;
            }
            c += *flux_u * gv[i];
        }
        if (std::abs(gu[i]) > tiny) {
            if (!flux_v) {
                return std::nullopt;
            }
            c -= *flux_v * gu[i];
        }
        return c;
    };
    const auto c_left = end_constant(BoundaryEnd::Left);
    const auto c_right = end_constant(BoundaryEnd::Right);
    if (!c_left && !c_right) {
        throw ConfigError("the Wronskian integration constant is unknown at both ends; "
                          "supply the boundary fluxes of the data runs");
    }
    const bool from_left = c_left && (!c_right || std::abs(w.front()) <= std::abs(w.back()));
    std::vector<double> minus_aw;
    if (from_left) {
        minus_aw = detail::cumulative_trapezoid(psi, dx);
        for (double& v : minus_aw) {
            v += *c_left;
        }
    } else {
        minus_aw = detail::cumulative_trapezoid_from_right(psi, dx);
        for (double& v : minus_aw) {
            v = *c_right - v;
        }
    }

    std::vector<double> a(n, 0.0);
    std::vector<bool> valid(n, false);
    std::size_t degenerate = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(w[i]) >= cfg.w_floor) {
            a[i] = -minus_aw[i] / w[i];
            valid[i] = true;
        } else {
            ++degenerate;
        }
    }
    if (static_cast<double>(degenerate) > 0.2 * static_cast<double>(n)) {
        throw DegenerateDataError("the Wronskian g_u g_v' - g_v g_u' is below " +
                                  fmt(cfg.w_floor) + " on " + std::to_string(degenerate) +
                                  " of " + std::to_string(n) +
                                  " nodes; the two profiles carry no independent information");
    }
    apply_anchor(a, valid, cfg);
    const std::size_t filled = fill_invalid(a, valid);
    const std::size_t clipped = clip_below(a, cfg.a_floor);
    if (diag != nullptr) {
        diag->filled += filled;
        diag->clipped += clipped;
    }
    return ScalarField(grid, std::move(a));
}

SubstitutionResult successive_substitution(const ScalarField& g_u, const ScalarField& g_v,
                                           const std::vector<double>& phi_tilde,
                                           const ReactionCurve& start, const SchemeConfig& cfg) {
    const auto& grid = g_u.grid();
    require_same_grid(grid, g_v.grid());
    const std::size_t n = grid.size();
    if (phi_tilde.size() != n) {
        throw ConfigError("phi_tilde does not match the grid");
    }
    const auto gu = g_u.values();
    const auto gv = g_v.values();
    require_increasing(gu, grid, "g_u");
    const auto gup = detail::derivative(gu, grid.dx());
    const auto gvp = detail::derivative(gv, grid.dx());

    SubstitutionResult res{start.with_values(std::vector<double>(start.nodal_values().begin(),
                                                                 start.nodal_values().end())),
                           {},
                           0.0,
                           false};
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(gup[i]) >= cfg.mu_floor) {
            res.kappa_estimate = std::max(res.kappa_estimate, std::abs(gvp[i] / gup[i]));
        }
    }

    // Values live at the arguments g_u(x_i) and are overwritten in ascending order,
    // so f(g_v(x_i)) sees the current sweep wherever g_v(x_i) < g_u(x_i). When the
    // bracket of g_v(x_i) contains node i itself the unknown appears on both sides
    // and is solved for directly; an explicit update there amplifies by g_u'/g_v'.
    const double meet_tol = 1e-10 * std::max(1.0, gu.back() - gu.front());
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) {
        vals[i] = res.f(gu[i]);
    }
    for (int sweep = 0; sweep < cfg.max_f_inner; ++sweep) {
        for (std::size_t i = 0; i < n; ++i) {
            const double denom_meet = gvp[i] - gup[i];
            if (std::abs(gu[i] - gv[i]) <= meet_tol && std::abs(denom_meet) >= cfg.delta_floor) {
                vals[i] = phi_tilde[i] / denom_meet;
                continue;
            }
            if (std::abs(gvp[i]) < cfg.delta_floor) {
                continue;
            }
            const double t = gv[i];
            if (t <= gu.front() || t >= gu.back()) {
                const double end = t <= gu.front() ? vals.front() : vals.back();
                vals[i] = (end * gup[i] + phi_tilde[i]) / gvp[i];
                continue;
            }
            const auto it = std::upper_bound(gu.begin(), gu.end(), t);
            const std::size_t j = static_cast<std::size_t>(it - gu.begin()) - 1;
            const double theta = (t - gu[j]) / (gu[j + 1] - gu[j]);
            double self = 0.0;  // weight of vals[i] in f(t)
            double rest = 0.0;
            for (const auto& [m, w] : {std::pair{j, 1.0 - theta}, std::pair{j + 1, theta}}) {
                if (m == i) {
                    self += w;
                } else {
                    rest += w * vals[m];
                }
            }
            const double lhs = gvp[i] - self * gup[i];
            if (self > 0.0 && std::abs(lhs) >= std::max(cfg.delta_floor, 0.5 * std::abs(gvp[i]))) {
                vals[i] = (rest * gup[i] + phi_tilde[i]) / lhs;
            } else {
                vals[i] = ((rest + self * vals[i]) * gup[i] + phi_tilde[i]) / gvp[i];
            }
        }
        ReactionCurve next = rebin(gu, vals, res.f);
        const double change = detail::sup_diff(next.nodal_values(), res.f.nodal_values());
        const double size = detail::sup_norm(next.nodal_values());
        res.f = std::move(next);
        res.sweep_changes.push_back(change);
        if (!std::isfinite(change)) {
            throw ContractionFailure("successive substitution for f produced non-finite values",
                                     res.kappa_estimate);
        }
        if (change <= cfg.tol_inner * std::max(1.0, size)) {
            res.converged = true;
            break;
        }
        const auto& c = res.sweep_changes;
        const std::size_t m = c.size();
        if (m >= 4 && c[m - 1] > c[m - 2] && c[m - 2] > c[m - 3] && c[m - 3] > c[m - 4]) {
            throw ContractionFailure("successive substitution for f diverges (sweep change grew "
                                     "three times in a row); slope ratio estimate kappa = " +
                                         fmt(res.kappa_estimate),
                                     res.kappa_estimate);
        }
    }
    return res;
}

SubstitutionResult update_f_wronskian(const ScalarField& u_t_T, const ScalarField& v_t_T,
                                      const ScalarField& a_next, const ScalarField& g_u,
                                      const ScalarField& g_v, const ScalarField& r_u_T,
                                      const ScalarField& r_v_T, const ReactionCurve& start,
                                      const SchemeConfig& cfg) {
    const auto& grid = g_u.grid();
    for (const ScalarField* f : {&u_t_T, &v_t_T, &a_next, &g_v, &r_u_T, &r_v_T}) {
        require_same_grid(grid, f->grid());
    }
    const std::size_t n = grid.size();
    const double dx = grid.dx();
    const auto gup = detail::derivative(g_u.values(), dx);
    const auto gvp = detail::derivative(g_v.values(), dx);
    const auto gupp = detail::second_derivative(g_u.values(), dx);
    const auto gvpp = detail::second_derivative(g_v.values(), dx);
    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double w_p = gupp[i] * gvp[i] - gvpp[i] * gup[i];
        phi[i] = (u_t_T[i] - r_u_T[i]) * gvp[i] - (v_t_T[i] - r_v_T[i]) * gup[i] -
                 a_next[i] * w_p;
    }
    return successive_substitution(g_u, g_v, phi, start, cfg);
}

TimeSeries differentiate(const TimeSeries& h) {
    return TimeSeries(h.timegrid(), detail::derivative(h.values(), h.timegrid().dt()));
}

ReactionCurve update_f_trace(const TimeSeries& h, const TimeSeries& h_dot,
                             const TimeSeries& r_at_end, double a_at_end,
                             const TimeSeries& uxx_at_end, const ReactionCurve& layout) {
    const std::size_t n = h.size();
    if (h_dot.size() != n || r_at_end.size() != n || uxx_at_end.size() != n) {
        throw ConfigError("trace inputs have different lengths");
    }
    const auto hv = h.values();
    const double sign = hv.back() >= hv.front() ? 1.0 : -1.0;
    const double width = std::abs(hv.back() - hv.front());
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (sign * (hv[k + 1] - hv[k]) < -1e-12 * width) {
            std::size_t e = k + 1;
            while (e + 1 < n && sign * (hv[e + 1] - hv[e]) < 0.0) {
                ++e;
            }
            const auto& tg = h.timegrid();
            throw ConditionViolation("the trace h is not monotone on t in [" +
                                     fmt(tg.time(static_cast<int>(k))) + ", " +
                                     fmt(tg.time(static_cast<int>(e))) + "]");
        }
    }

    std::vector<std::pair<double, double>> pts(n);
    for (std::size_t k = 0; k < n; ++k) {
        pts[k] = {hv[k], h_dot[k] - r_at_end[k] - a_at_end * uxx_at_end[k]};
    }
    std::stable_sort(pts.begin(), pts.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const double tol = 1e-10 * std::max(width, 1e-300);
    std::vector<double> args, values;
    for (std::size_t k = 0; k < n;) {
        std::size_t e = k;
        double sum_a = 0.0;
        double sum_v = 0.0;
        while (e < n && pts[e].first - pts[k].first <= tol) {
            sum_a += pts[e].first;
            sum_v += pts[e].second;
            ++e;
        }
        const auto count = static_cast<double>(e - k);
        args.push_back(sum_a / count);
        values.push_back(sum_v / count);
        k = e;
    }
    if (args.size() < 2) {
        throw DegenerateDataError("the trace h is constant; f cannot be recovered from it");
    }
    return rebin(args, values, layout);
}

// ---------------------------------------------------------------------------
// Driver

namespace {

struct Solved {
    StateHistory history;
    std::uint64_t clamps;
};

Solved solve_counted(const ProblemSpec& skeleton, const ScalarField& a, const ReactionCurve& f) {
    const ProblemSpec p = skeleton.with_coefficients(a, f);
    const std::uint64_t before = p.f().clamp_count();
    StateHistory s = solve_forward(p);
    return {std::move(s), p.f().clamp_count() - before};
}

}  // namespace

ReconstructionResult run_reconstruction(const ReconstructionData& data,
                                        const ProblemSpec& skeleton_u,
                                        const ProblemSpec* skeleton_v, const SchemeConfig& cfg,
                                        const ScalarField& a0, const ReactionCurve& f0) {
    cfg.validate();
    const bool two_final = cfg.scheme != Scheme::FinalPlusTrace;
    if (two_final && (!data.g_v || skeleton_v == nullptr)) {
        throw ConfigError("two-final schemes need g_v and a skeleton for the second run");
    }
    if (!two_final && !data.h) {
        throw ConfigError("FinalPlusTrace needs a boundary trace h");
    }
    const auto& grid = skeleton_u.grid();
    require_same_grid(grid, data.g_u.grid());
    require_same_grid(grid, a0.grid());
    if (data.h && !(data.h->timegrid() == skeleton_u.timegrid())) {
        throw ConfigError("the trace does not live on the skeleton's time grid");
    }
    if (!two_final && !data.h->values().empty()) {
        const BoundaryCondition& bc = skeleton_u.bc(data.trace_end);
        if (!bc.is_homogeneous_neumann()) {
            throw UnsupportedConfiguration(
                "FinalPlusTrace needs a homogeneous Neumann condition at the trace end");
        }
    }

    ReconstructionResult res;
    try {
        res.conditions = check_conditions(data.g_u, data.g_v ? &*data.g_v : nullptr,
                                          data.h ? &*data.h : nullptr, cfg);
    } catch (const ConditionViolation& e) {
        throw ReconstructionError(e.what(), res, true);
    }
    res.warnings = res.conditions.warnings;

    const ValueRange j = two_final ? res.conditions.range_u : *res.conditions.range_h;
    if (!(j.width() > 0.0)) {
        throw ReconstructionError("the data range J is empty", res, true);
    }
    const double horizon = skeleton_u.timegrid().horizon();
    const ScalarField r_u_T = skeleton_u.forcing_at(horizon);
    const std::optional<ScalarField> r_v_T =
        two_final ? std::optional<ScalarField>(skeleton_v->forcing_at(horizon)) : std::nullopt;
    std::optional<TimeSeries> h_dot, r_end;
    if (data.h) {
        h_dot = differentiate(*data.h);
        const double x_end = data.trace_end == BoundaryEnd::Left ? 0.0 : grid.length();
        const Forcing& r = skeleton_u.forcing();
        r_end = TimeSeries::from_function(skeleton_u.timegrid(),
                                          [&](double t) { return r(x_end, t); });
    }

    ScalarField a = a0;
    ReactionCurve f = f0.resampled(j.lo, j.hi, cfg.n_knots);
    res.a_iterates.push_back(a);
    res.f_iterates.push_back(f);

    int k = 0;
    const auto fail = [&](const std::string& what) -> ReconstructionError {
        return ReconstructionError("iteration " + std::to_string(k) + ": " + what, res, false);
    };

    try {
        std::optional<Solved> su, sv;
        const auto solve_all = [&](std::uint64_t& clamps) {
            su = solve_counted(skeleton_u, a, f);
            clamps += su->clamps;
            if (two_final) {
                sv = solve_counted(*skeleton_v, a, f);
                clamps += sv->clamps;
            }
        };
        const auto misfits = [&](IterationRecord& rec) {
            rec.misfit_g = detail::sup_diff(final_profile(su->history).values(), data.g_u.values());
            if (two_final) {
                rec.misfit_g = std::max(rec.misfit_g,
                                        detail::sup_diff(final_profile(sv->history).values(),
                                                         data.g_v->values()));
            }
            rec.misfit_h = data.h ? detail::sup_diff(trace_at(su->history, data.trace_end).values(),
                                                     data.h->values())
                                  : kNaN;
        };

        IterationRecord rec0;
        rec0.da_sup = kNaN;
        rec0.df_sup = kNaN;
        solve_all(rec0.clamp_events);
        misfits(rec0);
        res.history.push_back(rec0);

        std::size_t total_clipped = 0;
        for (k = 1; k <= cfg.max_outer; ++k) {
            IterationRecord rec;
            rec.k = k;
            f.reset_clamp_count();
            UpdateDiagnostics diag;
            const ScalarField u_t = time_derivative_at_T(su->history);
            ScalarField a_new = a;
            std::optional<ReactionCurve> f_new;
            switch (cfg.scheme) {
                case Scheme::FinalPlusTrace: {
                    a_new = update_a_sequential(u_t, f, data.g_u, r_u_T, skeleton_u.bc_left(),
                                                skeleton_u.bc_right(), horizon, cfg, &diag);
                    const TimeSeries uxx = boundary_second_derivative(su->history, data.trace_end);
                    const std::size_t end_node =
                        data.trace_end == BoundaryEnd::Left ? 0 : grid.size() - 1;
                    const double a_end = cfg.a_anchor && cfg.anchor_end == data.trace_end
                                             ? *cfg.a_anchor
                                             : a_new[end_node];
                    f_new = update_f_trace(*data.h, *h_dot, *r_end, a_end, uxx, f);
                    break;
                }
                case Scheme::TwoFinalSequential: {
                    a_new = update_a_sequential(u_t, f, data.g_u, r_u_T, skeleton_u.bc_left(),
                                                skeleton_u.bc_right(), horizon, cfg, &diag);
                    const Solved fresh = solve_counted(*skeleton_v, a_new, f);
                    rec.clamp_events += fresh.clamps;
                    f_new = update_f_sequential(time_derivative_at_T(fresh.history), a_new,
                                                *data.g_v, *r_v_T, f);
                    break;
                }
                case Scheme::TwoFinalWronskian: {
                    const ScalarField v_t = time_derivative_at_T(sv->history);
                    a_new = update_a_wronskian(u_t, v_t, f, data.g_u, *data.g_v, r_u_T, *r_v_T,
                                               skeleton_u, *skeleton_v, cfg, &diag);
                    SubstitutionResult sub = update_f_wronskian(u_t, v_t, a_new, data.g_u,
                                                                *data.g_v, r_u_T, *r_v_T, f, cfg);
                    if (!sub.converged) {
                        res.warnings.push_back("iteration " + std::to_string(k) +
                                               ": f substitution stopped after " +
                                               std::to_string(sub.sweep_changes.size()) +
                                               " sweeps without reaching tolerance");
                    }
                    f_new = std::move(sub.f);
                    break;
                }
            }
            rec.clamp_events += f.clamp_count();
            total_clipped += diag.clipped;
            rec.da_sup = detail::sup_diff(a_new.values(), a.values());
            rec.df_sup = detail::sup_diff(f_new->nodal_values(), f.nodal_values());
            a = std::move(a_new);
            f = std::move(*f_new);
            res.a_iterates.push_back(a);
            res.f_iterates.push_back(f);

            solve_all(rec.clamp_events);
            misfits(rec);
            res.history.push_back(rec);
            if (rec.da_sup < cfg.tol_outer && rec.df_sup < cfg.tol_outer) {
                res.converged = true;
                break;
            }
        }
        if (total_clipped > 0) {
            res.warnings.push_back("a was raised to a_floor at " + std::to_string(total_clipped) +
                                   " node updates");
        }
        std::uint64_t clamps = 0;
        for (const auto& r : res.history) {
            clamps += r.clamp_events;
        }
        if (clamps > 0) {
            res.warnings.push_back("f was evaluated outside J " + std::to_string(clamps) +
                                   " times (clamped to the end values)");
        }
    } catch (const ReconstructionError&) {
        throw;
    } catch (const BlowUpError& e) {
        throw fail(std::string("forward solve blew up: ") + e.what());
    } catch (const Error& e) {
        throw fail(e.what());
    }
    return res;
}

ProblemSpec lift_initial_value(const ProblemSpec& p) {
    const auto& grid = p.grid();
    const auto u0 = p.u0().values();
    const double dx = grid.dx();
    const auto d1 = detail::derivative(u0, dx);
    const auto d2 = detail::second_derivative(u0, dx);
    const double scale = std::max(1.0, detail::sup_norm(u0));
    const double value_tol = 1e-10 * scale;
    // One-sided u0' at the ends carries an O(dx^2 u0''') error; dx |u0''| bounds it.
    const double slope_tol = 1e-10 * scale + dx * detail::sup_norm(d2);
    for (std::size_t i : {std::size_t{0}, u0.size() - 1}) {
        if (std::abs(u0[i]) > value_tol || std::abs(d1[i]) > slope_tol) {
            throw ConfigError("lifting needs u0 and u0' to vanish at both ends (x = " +
                              fmt(grid.node(i)) + ")");
        }
    }
    // Homogeneous part of the discrete operator, so that v + u0 reproduces the
    // original discrete solution.
    const DiffusionOperator op(p.a().values(), dx, p.bc_left(), p.bc_right());
    std::vector<double> div(u0.size());
    op.apply(u0, div);
    if (p.bc_left().kind() == BoundaryKind::Dirichlet) {
        div.front() = 0.0;
    }
    if (p.bc_right().kind() == BoundaryKind::Dirichlet) {
        div.back() = 0.0;
    }
    const ScalarField added(grid, std::move(div));
    Forcing base = p.forcing();
    Forcing lifted = [base, added](double x, double t) { return base(x, t) + added.interpolate(x); };
    return p.with_initial_value(ScalarField::constant(grid, 0.0))
        .with_forcing(std::move(lifted))
        .with_reaction_shift(p.u0());
}

double relative_l2_error(const ScalarField& a, const std::function<double(double)>& a_ex) {
    const auto& grid = a.grid();
    std::vector<double> diff(a.size()), ref(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double e = a_ex(grid.node(i));
        diff[i] = (a[i] - e) * (a[i] - e);
        ref[i] = e * e;
    }
    return std::sqrt(detail::trapezoid(diff, grid.dx()) / detail::trapezoid(ref, grid.dx()));
}

double relative_l2_error(const ReactionCurve& f, const std::function<double(double)>& f_ex,
                         double lo, double hi, double fraction) {
    const double margin = 0.5 * (1.0 - fraction) * (hi - lo);
    const double a = lo + margin;
    const double b = hi - margin;
    constexpr int kPoints = 401;
    std::vector<double> diff(kPoints), ref(kPoints);
    const double h = (b - a) / (kPoints - 1);
    for (int m = 0; m < kPoints; ++m) {
        const double u = a + h * m;
        const double e = f_ex(u);
        const double v = f(u);
        diff[static_cast<std::size_t>(m)] = (v - e) * (v - e);
        ref[static_cast<std::size_t>(m)] = e * e;
    }
    return std::sqrt(detail::trapezoid(diff, h) / detail::trapezoid(ref, h));
}

void write_history_csv(const ReconstructionResult& r, std::ostream& out) {
    out << "k,misfit_g,misfit_h,da_sup,df_sup,clamp_events\n";
    for (const auto& rec : r.history) {
        out << rec.k << ',' << format_number(rec.misfit_g) << ',' << format_number(rec.misfit_h)
            << ',' << format_number(rec.da_sup) << ',' << format_number(rec.df_sup) << ','
            << rec.clamp_events << '\n';
    }
}

void write_a_csv(const ScalarField& a, std::ostream& out,
                 const std::function<double(double)>& a_ex) {
    out << (a_ex ? "x,a,a_exact\n" : "x,a\n");
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.grid().node(i);
        out << format_number(x) << ',' << format_number(a[i]);
        if (a_ex) {
            out << ',' << format_number(a_ex(x));
        }
        out << '\n';
    }
}

void write_f_csv(const ReactionCurve& f, std::ostream& out,
                 const std::function<double(double)>& f_ex) {
    out << (f_ex ? "u,f,f_exact\n" : "u,f\n");
    const auto knots = f.knots();
    const auto values = f.nodal_values();
    for (std::size_t m = 0; m < knots.size(); ++m) {
        out << format_number(knots[m]) << ',' << format_number(values[m]);
        if (f_ex) {
            out << ',' << format_number(f_ex(knots[m]));
        }
        out << '\n';
    }
}

}  // namespace rdinv
