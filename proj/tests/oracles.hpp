#pragma once

// Closed-form reference values. Nothing here calls into the library.

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline constexpr double pi = std::numbers::pi;

/// Separation-of-variables solution of u_t = u_xx, u(0) = u(1) = 0, u0 = sin(pi x).
inline double heat_eigenmode(double x, double t) {
    return std::exp(-pi * pi * t) * std::sin(pi * x);
}

/// Manufactured solution u = e^{-t}(1 + x^2) with a = 1 + x and f(u) = u^2.
namespace manufactured {
inline double u(double x, double t) { return std::exp(-t) * (1.0 + x * x); }
inline double a(double x) { return 1.0 + x; }
inline double f(double u) { return u * u; }
/// r = u_t - (a u_x)_x - f(u); (a u_x)_x = e^{-t}(2 + 4x).
inline double r(double x, double t) {
    const double e = std::exp(-t);
    return -e * (1.0 + x * x) - e * (2.0 + 4.0 * x) - f(u(x, t));
}
/// Impedance data a u_n + gamma u with outward normal; u_x(0, t) = 0.
inline double b_left(double gamma, double t) { return gamma * u(0.0, t); }
inline double b_right(double gamma, double t) {
    return a(1.0) * 2.0 * std::exp(-t) + gamma * u(1.0, t);
}
}  // namespace manufactured

/// int_0^1 cos(alpha x) sin(k x) dx.
inline double cos_sin_integral(double alpha, double k) {
    const auto part = [](double w) { return std::abs(w) < 1e-12 ? 0.0 : (1.0 - std::cos(w)) / w; };
    return 0.5 * (part(k + alpha) + part(k - alpha));
}

/// Trace u_hat(1, t) of the linearized problem
///   u_hat_t = u_hat_xx - sin(m pi x) u_base,  u_hat(0) = 0, u_hat_x(1) = 0, u_hat(., 0) = 0,
/// with u_base = e^{-lambda_1 t} sin(pi x / 2), expanded in the eigenfunctions
/// phi_n = sqrt(2) sin((n - 1/2) pi x) with lambda_n = ((n - 1/2) pi)^2.
inline double potential_trace_series(int m, double t, int n_terms = 200) {
    const double lam1 = 0.25 * pi * pi;
    const double e1 = std::exp(-lam1 * t);
    double sum = 0.0;
    for (int n = 1; n <= n_terms; ++n) {
        const double k = (n - 0.5) * pi;
        // <sin(m pi x) sin(pi x / 2), phi_n> via the product-to-sum identity.
        const double proj = std::sqrt(2.0) * 0.5 *
                            (cos_sin_integral((m - 0.5) * pi, k) - cos_sin_integral((m + 0.5) * pi, k));
        const double lam = k * k;
        const double c = n == 1 ? -proj * t * e1 : -proj * (e1 - std::exp(-lam * t)) / (lam - lam1);
        sum += c * std::sqrt(2.0) * (n % 2 == 1 ? 1.0 : -1.0);
    }
    return sum;
}

/// (x^2 (1 - x)^2)''.
inline double bump_second_derivative(double x) { return 2.0 - 12.0 * x + 12.0 * x * x; }

/// Piecewise-linear interpolation through (xs, ys), xs increasing.
inline double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    std::size_t j = 1;
    while (xs[j] < x) ++j;
    const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    return (1.0 - w) * ys[j - 1] + w * ys[j];
}

/// Observed convergence order from errors at successive halvings.
inline double observed_order(double coarse, double fine) { return std::log2(coarse / fine); }

}  // namespace oracle
