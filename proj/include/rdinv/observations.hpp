#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rdinv/core_types.hpp"

namespace rdinv {

enum class NoiseDistribution { Uniform, Gaussian };

/// Additive noise level * ||data||_inf * xi with xi ~ U[-1, 1] or N(0, 1).
struct NoiseSpec {
    double level = 0.0;
    NoiseDistribution distribution = NoiseDistribution::Uniform;
    std::uint64_t seed = 0;

    void validate() const;
    /// E[xi^2] of the chosen distribution.
    double second_moment() const noexcept {
        return distribution == NoiseDistribution::Uniform ? 1.0 / 3.0 : 1.0;
    }
};

enum class SmoothingOrder { H1, H2 };
enum class LambdaRule { Fixed, Discrepancy };

struct SmoothingSpec {
    SmoothingOrder order = SmoothingOrder::H2;
    double lambda = 1e-8;
    LambdaRule rule = LambdaRule::Fixed;

    /// Discrepancy when the data are noisy, fixed lambda = 1e-8 otherwise.
    static SmoothingSpec default_for(SmoothingOrder order, const NoiseSpec& noise);
    void validate() const;
};

/// Equispaced samples (endpoints included) with the noise that produced them.
struct Samples {
    std::vector<double> coords;
    std::vector<double> values;
    NoiseSpec noise;
};

Samples sample_and_perturb(const ScalarField& field, int n_samples, const NoiseSpec& noise);
Samples sample_and_perturb(const TimeSeries& series, int n_samples, const NoiseSpec& noise);

struct SmoothingReport {
    double lambda = 0.0;
    double residual = 0.0;  // sum of squared misfits at the samples
    double target = 0.0;    // discrepancy target; 0 under a fixed lambda
    bool target_reached = true;
    double min_derivative = 0.0;      // min s'
    double min_abs_derivative = 0.0;  // min |s'|
};

struct SmoothedField {
    ScalarField field;
    SmoothingReport report;
};

struct SmoothedSeries {
    TimeSeries series;
    SmoothingReport report;
};

/// Minimizes sum_j (s(x_j) - y_j)^2 + lambda |s|^2 over nodal values s, where s(x)
/// interpolates linearly and |s| is the discrete L2 norm of s' (H1) or s'' (H2).
SmoothedField smooth_to_grid(const Samples& samples, const SpatialGrid& target,
                             const SmoothingSpec& spec);
SmoothedSeries smooth_to_grid(const Samples& samples, const TimeGrid& target,
                              const SmoothingSpec& spec);

/// Low-level form on a uniform node set {origin + i * spacing}.
std::vector<double> smooth_values(const std::vector<double>& coords,
                                  const std::vector<double>& values, double origin,
                                  double spacing, std::size_t n_nodes, SmoothingOrder order,
                                  double lambda);

/// `# kind=<kind> noise=<level> seed=<seed>` header, then `coord,value` rows.
void write_samples_csv(const Samples& samples, const std::string& kind, std::ostream& out);
void write_samples_csv(const Samples& samples, const std::string& kind, const std::string& path);
Samples read_samples_csv(const std::string& path, std::string* kind = nullptr);

}  // namespace rdinv
