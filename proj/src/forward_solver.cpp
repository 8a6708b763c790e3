#include "rdinv/forward_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <utility>

#include "rdinv/csv.hpp"

namespace rdinv {

StateHistory::StateHistory(SpatialGrid grid, TimeGrid timegrid, std::vector<double> values,
                           std::array<bool, 2> neumann_ends)
    : grid_(std::move(grid)),
      timegrid_(timegrid),
      values_(std::move(values)),
      neumann_ends_(neumann_ends) {
    if (values_.size() != grid_.size() * timegrid_.size()) {
        throw ConfigError("state history size does not match its grids");
    }
}

// ---------------------------------------------------------------------------
// DiffusionOperator

DiffusionOperator::DiffusionOperator(std::span<const double> a, double dx,
                                     const BoundaryCondition& left,
                                     const BoundaryCondition& right,
                                     std::span<const double> potential)
    : left_(left), right_(right) {
    const std::size_t n = a.size();
    if (n < 3) {
        throw ConfigError("diffusion operator needs at least three nodes");
    }
    if (!potential.empty() && potential.size() != n) {
        throw ConfigError("potential size does not match the coefficient");
    }
    const std::size_t last = n - 1;
    const double inv_dx2 = 1.0 / (dx * dx);
    const auto q = [&](std::size_t i) { return potential.empty() ? 0.0 : potential[i]; };

    lower_.assign(n, 0.0);
    diag_.assign(n, 0.0);
    upper_.assign(n, 0.0);
    for (std::size_t i = 1; i < last; ++i) {
        const double west = 0.5 * (a[i - 1] + a[i]);
        const double east = 0.5 * (a[i] + a[i + 1]);
        lower_[i] = west * inv_dx2;
        upper_[i] = east * inv_dx2;
        diag_[i] = -(west + east) * inv_dx2 - q(i);
    }

    // Ghost node u_{-1} = u_1 + 2 dx (b - gamma u_0) / a_0 and ghost face
    // a_{-1/2} = (3 a_0 - a_1) / 2; the face pair sums to 2 a_0.
    const auto impedance_row = [&](const BoundaryCondition& bc, std::size_t i, std::size_t inner,
                                   double& coupling, double& data_coeff) {
        coupling = 2.0 * a[i] * inv_dx2;
        diag_[i] = -2.0 * a[i] * inv_dx2 - q(i);
        data_coeff = 0.0;
        if (bc.is_homogeneous_neumann()) {
            return;
        }
        const double ghost_face = 0.5 * (3.0 * a[i] - a[inner]);
        if (!(a[i] > 0.0) || !(ghost_face > 0.0)) {
            throw ConfigError(
                "diffusion coefficient is not positive enough at an impedance boundary "
                "for this grid");
        }
        data_coeff = 2.0 * ghost_face / (a[i] * dx);
        diag_[i] -= data_coeff * bc.gamma();
    };

    if (left_.kind() == BoundaryKind::Impedance) {
        impedance_row(left_, 0, 1, upper_[0], left_data_coeff_);
    }
    if (right_.kind() == BoundaryKind::Impedance) {
        impedance_row(right_, last, last - 1, lower_[last], right_data_coeff_);
    }
}

void DiffusionOperator::apply(std::span<const double> u, std::span<double> out) const {
    const std::size_t n = diag_.size();
    const std::size_t last = n - 1;
    out[0] = diag_[0] * u[0] + upper_[0] * u[1];
    for (std::size_t i = 1; i < last; ++i) {
        out[i] = lower_[i] * u[i - 1] + diag_[i] * u[i] + upper_[i] * u[i + 1];
    }
    out[last] = lower_[last] * u[last - 1] + diag_[last] * u[last];
}

void DiffusionOperator::add_boundary_terms(double t, std::span<double> out) const {
    if (left_data_coeff_ != 0.0) {
        out[0] += left_data_coeff_ * left_.value(t);
    }
    if (right_data_coeff_ != 0.0) {
        out[out.size() - 1] += right_data_coeff_ * right_.value(t);
    }
}

// ---------------------------------------------------------------------------
// Crank-Nicolson integrator

namespace {

/// Thomas factorization of a fixed tridiagonal matrix.
class TridiagonalSolver {
public:
    TridiagonalSolver(std::vector<double> lower, std::vector<double> diag, std::vector<double> upper)
        : lower_(std::move(lower)), c_(diag.size()), inv_denom_(diag.size()) {
        const std::size_t n = diag.size();
        double denom = diag[0];
        if (denom == 0.0) {
            throw ConfigError("singular Crank-Nicolson system");
        }
        inv_denom_[0] = 1.0 / denom;
        c_[0] = upper[0] * inv_denom_[0];
        for (std::size_t i = 1; i < n; ++i) {
            denom = diag[i] - lower_[i] * c_[i - 1];
            if (denom == 0.0) {
                throw ConfigError("singular Crank-Nicolson system");
            }
            inv_denom_[i] = 1.0 / denom;
            c_[i] = i + 1 < n ? upper[i] * inv_denom_[i] : 0.0;
        }
    }

    void solve(std::span<const double> rhs, std::span<double> x) const {
        const std::size_t n = c_.size();
        x[0] = rhs[0] * inv_denom_[0];
        for (std::size_t i = 1; i < n; ++i) {
            x[i] = (rhs[i] - lower_[i] * x[i - 1]) * inv_denom_[i];
        }
        for (std::size_t i = n - 1; i-- > 0;) {
            x[i] -= c_[i] * x[i + 1];
        }
    }

private:
    std::vector<double> lower_;
    std::vector<double> c_;
    std::vector<double> inv_denom_;
};

}  // namespace

StateHistory integrate_crank_nicolson(const DiffusionOperator& op, const SpatialGrid& grid,
                                      const TimeGrid& timegrid, std::span<const double> u0,
                                      const NodalReaction& reaction, const NodalSource& source,
                                      const PicardSettings& picard) {
    const std::size_t n = grid.size();
    if (op.size() != n || u0.size() != n) {
        throw ConfigError("operator, grid and initial value sizes differ");
    }
    const std::size_t last = n - 1;
    const double dt = timegrid.dt();
    const double half_dt = 0.5 * dt;
    const bool dirichlet_left = op.left().kind() == BoundaryKind::Dirichlet;
    const bool dirichlet_right = op.right().kind() == BoundaryKind::Dirichlet;

    std::vector<double> lo(n), di(n), up(n);
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = -half_dt * op.lower()[i];
        di[i] = 1.0 - half_dt * op.diag()[i];
        up[i] = -half_dt * op.upper()[i];
    }
    if (dirichlet_left) {
        lo[0] = 0.0;
        di[0] = 1.0;
        up[0] = 0.0;
    }
    if (dirichlet_right) {
        lo[last] = 0.0;
        di[last] = 1.0;
        up[last] = 0.0;
    }
    const TridiagonalSolver solver(std::move(lo), std::move(di), std::move(up));

    std::vector<double> history(n * timegrid.size());
    std::copy(u0.begin(), u0.end(), history.begin());

    std::vector<double> explicit_part(n), rhs(n), current(n), next(n), trial(n);
    std::vector<double> src_old(n, 0.0), src_new(n, 0.0), bnd_old(n, 0.0), bnd_new(n, 0.0);
    std::vector<double> reaction_old(n, 0.0);
    if (source) {
        source(0, src_old);
    }
    op.add_boundary_terms(0.0, bnd_old);

    std::copy(u0.begin(), u0.end(), current.begin());
    for (int k = 0; k < timegrid.n_steps(); ++k) {
        const double t_new = timegrid.time(k + 1);
        std::fill(src_new.begin(), src_new.end(), 0.0);
        if (source) {
            source(k + 1, src_new);
        }
        std::fill(bnd_new.begin(), bnd_new.end(), 0.0);
        op.add_boundary_terms(t_new, bnd_new);

        op.apply(current, explicit_part);
        if (reaction) {
            for (std::size_t i = 0; i < n; ++i) {
                reaction_old[i] = reaction(current[i], i);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            explicit_part[i] = current[i] +
                               half_dt * (explicit_part[i] + bnd_old[i] + bnd_new[i] + src_old[i] +
                                          src_new[i] + reaction_old[i]);
        }

        const auto assemble_and_solve = [&](std::span<const double> guess) {
            for (std::size_t i = 0; i < n; ++i) {
                rhs[i] = explicit_part[i] + (reaction ? half_dt * reaction(guess[i], i) : 0.0);
            }
            if (dirichlet_left) {
                rhs[0] = op.left().value(t_new);
            }
            if (dirichlet_right) {
                rhs[last] = op.right().value(t_new);
            }
            solver.solve(rhs, trial);
        };

        std::copy(current.begin(), current.end(), next.begin());
        if (!reaction) {
            assemble_and_solve(next);
            next.swap(trial);
        } else {
            bool settled = false;
            for (int it = 0; it < picard.max_iterations; ++it) {
                assemble_and_solve(next);
                double change = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    change = std::max(change, std::abs(trial[i] - next[i]));
                }
                next.swap(trial);
                if (!std::isfinite(change)) {
                    break;
                }
                if (change < picard.tolerance) {
                    settled = true;
                    break;
                }
            }
            if (!settled) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (!std::isfinite(next[i])) {
                        throw BlowUpError(k + 1, static_cast<int>(i));
                    }
                }
                throw StiffnessError("Picard iteration for the reaction term did not converge at step " +
                                     std::to_string(k + 1) + "; try a smaller time step");
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(next[i])) {
                throw BlowUpError(k + 1, static_cast<int>(i));
            }
        }
        std::copy(next.begin(), next.end(), history.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
        current.swap(next);
        src_old.swap(src_new);
        bnd_old.swap(bnd_new);
    }

    const std::array<bool, 2> neumann{op.left().is_homogeneous_neumann(),
                                      op.right().is_homogeneous_neumann()};
    return StateHistory(grid, timegrid, std::move(history), neumann);
}

StateHistory solve_forward(const ProblemSpec& problem, const PicardSettings& picard) {
    const auto& grid = problem.grid();
    const auto& tg = problem.timegrid();
    const DiffusionOperator op(problem.a().values(), grid.dx(), problem.bc_left(),
                               problem.bc_right());

    const auto nodes = grid.nodes();
    const Forcing& r = problem.forcing();
    const NodalSource source = [&](int k, std::span<double> out) {
        const double t = tg.time(k);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = r(nodes[i], t);
        }
    };

    const ReactionCurve& f = problem.f();
    NodalReaction reaction;
    if (const auto& shift = problem.reaction_shift()) {
        const auto s = shift->values();
        reaction = [&f, s](double u, std::size_t i) { return f(u + s[i]); };
    } else {
        reaction = [&f](double u, std::size_t) { return f(u); };
    }
    return integrate_crank_nicolson(op, grid, tg, problem.u0().values(), reaction, source, picard);
}

ScalarField time_derivative_at_T(const StateHistory& s) {
    const int n_steps = s.timegrid().n_steps();
    if (n_steps < 3) {
        throw ConfigError("time derivative at T needs at least three time steps");
    }
    const auto u_n = s.row(n_steps);
    const auto u_n1 = s.row(n_steps - 1);
    const auto u_n2 = s.row(n_steps - 2);
    const double inv = 1.0 / (2.0 * s.timegrid().dt());
    std::vector<double> v(s.n_cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = (3.0 * u_n[i] - 4.0 * u_n1[i] + u_n2[i]) * inv;
    }
    return ScalarField(s.grid(), std::move(v));
}

TimeSeries boundary_second_derivative(const StateHistory& s, BoundaryEnd end) {
    if (!s.homogeneous_neumann(end)) {
        throw UnsupportedConfiguration(
            "boundary second derivative needs a homogeneous Neumann condition at that end");
    }
    const std::size_t last = s.n_cols() - 1;
    const std::size_t edge = end == BoundaryEnd::Left ? 0 : last;
    const std::size_t inner = end == BoundaryEnd::Left ? 1 : last - 1;
    const double inv_dx2 = 1.0 / (s.grid().dx() * s.grid().dx());
    std::vector<double> v(s.n_rows());
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = 2.0 * (s(k, inner) - s(k, edge)) * inv_dx2;
    }
    return TimeSeries(s.timegrid(), std::move(v));
}

ScalarField final_profile(const StateHistory& s) {
    const auto last = s.row(s.n_rows() - 1);
    return ScalarField(s.grid(), std::vector<double>(last.begin(), last.end()));
}

TimeSeries trace_at(const StateHistory& s, BoundaryEnd end) {
    const std::size_t col = end == BoundaryEnd::Left ? 0 : s.n_cols() - 1;
    std::vector<double> v(s.n_rows());
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = s(k, col);
    }
    return TimeSeries(s.timegrid(), std::move(v));
}

void write_history_csv(const StateHistory& s, std::ostream& out) {
    out << "# L=" << format_number(s.grid().length()) << " T=" << format_number(s.timegrid().horizon())
        << " n_cells=" << s.grid().n_cells() << " n_steps=" << s.timegrid().n_steps() << '\n';
    for (std::size_t k = 0; k < s.n_rows(); ++k) {
        write_csv_row(out, s.row(k));
    }
}

void write_history_csv(const StateHistory& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open " + path + " for writing");
    }
    write_history_csv(s, out);
}

}  // namespace rdinv
