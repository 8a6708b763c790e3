#include "rdinv/observations.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>

#include "numerics.hpp"
#include "rdinv/csv.hpp"

namespace rdinv {

void NoiseSpec::validate() const {
    if (!(level >= 0.0) || !(level < 1.0)) {
        throw ConfigError("noise level must lie in [0, 1)");
    }
}

SmoothingSpec SmoothingSpec::default_for(SmoothingOrder order, const NoiseSpec& noise) {
    SmoothingSpec s;
    s.order = order;
    if (noise.level > 0.0) {
        s.rule = LambdaRule::Discrepancy;
    }
    return s;
}

void SmoothingSpec::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("smoothing lambda must be positive and finite");
    }
}

namespace {

Samples sample_uniform(const std::function<double(double)>& eval, double length, int n_samples,
                       const NoiseSpec& noise) {
    noise.validate();
    if (n_samples < 4) {
        throw ConfigError("at least four samples are required");
    }
    Samples s;
    s.noise = noise;
    s.coords.resize(static_cast<std::size_t>(n_samples));
    s.values.resize(s.coords.size());
    for (int j = 0; j < n_samples; ++j) {
        const double c = j == n_samples - 1 ? length : length * j / (n_samples - 1);
        s.coords[static_cast<std::size_t>(j)] = c;
        s.values[static_cast<std::size_t>(j)] = eval(c);
    }
    if (noise.level > 0.0) {
        const double scale = noise.level * detail::sup_norm(s.values);
        std::mt19937_64 rng(noise.seed);
        if (noise.distribution == NoiseDistribution::Uniform) {
            std::uniform_real_distribution<double> xi(-1.0, 1.0);
            for (double& v : s.values) {
                v += scale * xi(rng);
            }
        } else {
            std::normal_distribution<double> xi(0.0, 1.0);
            for (double& v : s.values) {
                v += scale * xi(rng);
            }
        }
    }
    return s;
}

double residual_of(const std::vector<double>& coords, const std::vector<double>& values,
                   double origin, double spacing, const std::vector<double>& s) {
    double r = 0.0;
    for (std::size_t j = 0; j < coords.size(); ++j) {
        const double pos = (coords[j] - origin) / spacing;
        const std::size_t last = s.size() - 1;
        std::size_t cell = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, double(last - 1)));
        const double w = pos - static_cast<double>(cell);
        const double fit = (1.0 - w) * s[cell] + w * s[cell + 1];
        r += (fit - values[j]) * (fit - values[j]);
    }
    return r;
}

struct Smoothed {
    std::vector<double> values;
    SmoothingReport report;
};

Smoothed smooth_with_rule(const Samples& samples, double origin, double spacing,
                          std::size_t n_nodes, const SmoothingSpec& spec) {
    spec.validate();
    if (samples.coords.size() != samples.values.size() || samples.coords.size() < 2) {
        throw SmoothingError("sample coordinates and values are inconsistent");
    }
    const double extent = spacing * static_cast<double>(n_nodes - 1);
    const double tol = 1e-9 * extent;
    for (double c : samples.coords) {
        if (c < origin - tol || c > origin + extent + tol) {
            throw ConfigError("sample coordinate outside the target domain");
        }
    }
    Smoothed out;
    const auto run = [&](double lambda) {
        auto v = smooth_values(samples.coords, samples.values, origin, spacing, n_nodes, spec.order,
                               lambda);
        const double r = residual_of(samples.coords, samples.values, origin, spacing, v);
        return std::pair{std::move(v), r};
    };

    if (spec.rule == LambdaRule::Fixed || samples.noise.level <= 0.0) {
        auto [v, r] = run(spec.lambda);
        out.values = std::move(v);
        out.report.lambda = spec.lambda;
        out.report.residual = r;
    } else {
        const double scale = samples.noise.level * detail::sup_norm(samples.values);
        const double target = static_cast<double>(samples.values.size()) * scale * scale *
                              samples.noise.second_moment();
        out.report.target = target;
        double lo = -14.0;
        double hi = 6.0;
        auto [v_lo, r_lo] = run(std::pow(10.0, lo));
        auto [v_hi, r_hi] = run(std::pow(10.0, hi));
        if (r_lo >= target) {
            out.values = std::move(v_lo);
            out.report.lambda = std::pow(10.0, lo);
            out.report.residual = r_lo;
            out.report.target_reached = std::abs(r_lo - target) <= 0.1 * target;
        } else if (r_hi <= target) {
            out.values = std::move(v_hi);
            out.report.lambda = std::pow(10.0, hi);
            out.report.residual = r_hi;
            out.report.target_reached = std::abs(r_hi - target) <= 0.1 * target;
        } else {
            std::vector<double> best;
            double best_r = 0.0;
            double best_lambda = 0.0;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                auto [v, r] = run(std::pow(10.0, mid));
                best = std::move(v);
                best_r = r;
                best_lambda = std::pow(10.0, mid);
                if (std::abs(r - target) <= 0.01 * target) {
                    break;
                }
                (r < target ? lo : hi) = mid;
            }
            out.values = std::move(best);
            out.report.lambda = best_lambda;
            out.report.residual = best_r;
            out.report.target_reached = std::abs(best_r - target) <= 0.1 * target;
        }
    }
    const auto d = detail::derivative(out.values, spacing);
    out.report.min_derivative = *std::min_element(d.begin(), d.end());
    out.report.min_abs_derivative = std::abs(d.front());
    for (double x : d) {
        out.report.min_abs_derivative = std::min(out.report.min_abs_derivative, std::abs(x));
    }
    return out;
}

}  // namespace

Samples sample_and_perturb(const ScalarField& field, int n_samples, const NoiseSpec& noise) {
    return sample_uniform([&](double x) { return field.interpolate(x); }, field.grid().length(),
                          n_samples, noise);
}

Samples sample_and_perturb(const TimeSeries& series, int n_samples, const NoiseSpec& noise) {
    return sample_uniform([&](double t) { return series.interpolate(t); },
                          series.timegrid().horizon(), n_samples, noise);
}

namespace {

std::vector<double> solve_penalized(const std::vector<double>& coords,
                                    const std::vector<double>& values, double origin,
                                    double spacing, std::size_t n_nodes, SmoothingOrder order,
                                    double lambda) {
    using Triplet = Eigen::Triplet<double>;
    const auto n = static_cast<Eigen::Index>(n_nodes);
    std::vector<Triplet> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    const std::size_t last = n_nodes - 1;
    for (std::size_t j = 0; j < coords.size(); ++j) {
        const double pos = (coords[j] - origin) / spacing;
        const auto cell = static_cast<Eigen::Index>(std::clamp(std::floor(pos), 0.0, double(last - 1)));
        const double w = pos - static_cast<double>(cell);
        const double p[2] = {1.0 - w, w};
        for (int a = 0; a < 2; ++a) {
            rhs[cell + a] += p[a] * values[j];
            for (int b = 0; b < 2; ++b) {
                trips.emplace_back(cell + a, cell + b, p[a] * p[b]);
            }
        }
    }
    // Penalty lambda * h * sum (D s)^2 with D the scaled first or second difference.
    if (order == SmoothingOrder::H1) {
        const double w = lambda / spacing;
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            trips.emplace_back(i, i, w);
            trips.emplace_back(i + 1, i + 1, w);
            trips.emplace_back(i, i + 1, -w);
            trips.emplace_back(i + 1, i, -w);
        }
    } else {
        const double w = lambda / (spacing * spacing * spacing);
        const double stencil[3] = {1.0, -2.0, 1.0};
        for (Eigen::Index i = 1; i + 1 < n; ++i) {
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    trips.emplace_back(i - 1 + a, i - 1 + b, w * stencil[a] * stencil[b]);
                }
            }
        }
    }
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(m);
    if (solver.info() != Eigen::Success) {
        throw SmoothingError("smoothing normal equations are singular");
    }
    const Eigen::VectorXd s = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !s.allFinite()) {
        throw SmoothingError("smoothing normal equations are singular");
    }
    const Eigen::VectorXd d = solver.vectorD();
    if (d.minCoeff() <= 1e-14 * d.cwiseAbs().maxCoeff()) {
        throw SmoothingError("smoothing normal equations are singular (degenerate sampling)");
    }
    return std::vector<double>(s.data(), s.data() + s.size());
}

}  // namespace

std::vector<double> smooth_values(const std::vector<double>& coords,
                                  const std::vector<double>& values, double origin,
                                  double spacing, std::size_t n_nodes, SmoothingOrder order,
                                  double lambda) {
    // The penalty vanishes on constants (H1) or lines (H2). Fitting that part by
    // least squares first leaves the minimizer unchanged and keeps it exact
    // when lambda / spacing^3 swamps the data terms.
    const double m = static_cast<double>(coords.size());
    double cx = 0.0, cy = 0.0;
    for (std::size_t j = 0; j < coords.size(); ++j) {
        cx += coords[j] / m;
        cy += values[j] / m;
    }
    double slope = 0.0;
    if (order == SmoothingOrder::H2) {
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t j = 0; j < coords.size(); ++j) {
            sxx += (coords[j] - cx) * (coords[j] - cx);
            sxy += (coords[j] - cx) * (values[j] - cy);
        }
        slope = sxx > 0.0 ? sxy / sxx : 0.0;
    }
    std::vector<double> rest(values.size());
    for (std::size_t j = 0; j < values.size(); ++j) {
        rest[j] = values[j] - (cy + slope * (coords[j] - cx));
    }
    std::vector<double> s = solve_penalized(coords, rest, origin, spacing, n_nodes, order, lambda);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] += cy + slope * (origin + static_cast<double>(i) * spacing - cx);
    }
    return s;
}

SmoothedField smooth_to_grid(const Samples& samples, const SpatialGrid& target,
                             const SmoothingSpec& spec) {
    auto r = smooth_with_rule(samples, 0.0, target.dx(), target.size(), spec);
    return {ScalarField(target, std::move(r.values)), r.report};
}

SmoothedSeries smooth_to_grid(const Samples& samples, const TimeGrid& target,
                              const SmoothingSpec& spec) {
    auto r = smooth_with_rule(samples, 0.0, target.dt(), target.size(), spec);
    return {TimeSeries(target, std::move(r.values)), r.report};
}

void write_samples_csv(const Samples& samples, const std::string& kind, std::ostream& out) {
    out << "# kind=" << kind << " noise=" << format_number(samples.noise.level)
        << " seed=" << samples.noise.seed << '\n';
    out << "coord,value\n";
    for (std::size_t j = 0; j < samples.coords.size(); ++j) {
        out << format_number(samples.coords[j]) << ',' << format_number(samples.values[j]) << '\n';
    }
}

void write_samples_csv(const Samples& samples, const std::string& kind, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open " + path + " for writing");
    }
    write_samples_csv(samples, kind, out);
}

Samples read_samples_csv(const std::string& path, std::string* kind) {
    const CsvTable t = read_csv_table(path);
    if (t.columns.size() != 2 || t.columns[0] != "coord" || t.columns[1] != "value") {
        throw ConfigError(path + ": expected columns coord,value");
    }
    Samples s;
    for (const auto& c : t.comments) {
        for (const auto& [key, value] : parse_comment_fields(c)) {
            try {
                if (key == "noise") {
                    s.noise.level = std::stod(value);
                } else if (key == "seed") {
                    s.noise.seed = std::stoull(value);
                } else if (key == "kind" && kind != nullptr) {
                    *kind = value;
                }
            } catch (const std::exception&) {
                throw ConfigError(path + ": malformed header field " + key);
            }
        }
    }
    for (const auto& row : t.rows) {
        s.coords.push_back(row[0]);
        s.values.push_back(row[1]);
    }
    return s;
}

}  // namespace rdinv
