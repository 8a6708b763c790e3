#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace rdinv::detail {

/// First derivative: centered inside, second-order one-sided at the ends.
inline std::vector<double> derivative(std::span<const double> u, double h) {
    const std::size_t n = u.size();
    std::vector<double> d(n);
    const double inv = 1.0 / (2.0 * h);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        d[i] = (u[i + 1] - u[i - 1]) * inv;
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv;
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) * inv;
    return d;
}

/// Second derivative: centered inside, second-order four-point stencil at the ends.
inline std::vector<double> second_derivative(std::span<const double> u, double h) {
    const std::size_t n = u.size();
    std::vector<double> d(n);
    const double inv = 1.0 / (h * h);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        d[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv;
    }
    if (n >= 4) {
        d[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) * inv;
        d[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) * inv;
    } else {
        d[0] = d[1];
        d[n - 1] = d[n - 2];
    }
    return d;
}

/// Running trapezoid integral from node 0.
inline std::vector<double> cumulative_trapezoid(std::span<const double> v, double h) {
    std::vector<double> c(v.size(), 0.0);
    for (std::size_t i = 1; i < v.size(); ++i) {
        c[i] = c[i - 1] + 0.5 * h * (v[i - 1] + v[i]);
    }
    return c;
}

/// Running trapezoid integral from the last node backwards: c[i] = int_{x_i}^{x_N}.
inline std::vector<double> cumulative_trapezoid_from_right(std::span<const double> v, double h) {
    const std::size_t n = v.size();
    std::vector<double> c(n, 0.0);
    for (std::size_t i = n - 1; i-- > 0;) {
        c[i] = c[i + 1] + 0.5 * h * (v[i] + v[i + 1]);
    }
    return c;
}

inline double trapezoid(std::span<const double> v, double h) {
    double s = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        s += 0.5 * h * (v[i - 1] + v[i]);
    }
    return s;
}

inline double sup_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

inline double sup_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

/// Linear interpolation of (xs, ys) at x; xs strictly increasing, constant beyond the ends.
inline double interp_linear(std::span<const double> xs, std::span<const double> ys, double x) {
    if (x <= xs.front()) {
        return ys.front();
    }
    if (x >= xs.back()) {
        return ys.back();
    }
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - xs.begin());
    const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    return (1.0 - w) * ys[j - 1] + w * ys[j];
}

}  // namespace rdinv::detail
