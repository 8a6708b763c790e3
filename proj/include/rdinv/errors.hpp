#pragma once

#include <stdexcept>
#include <string>

namespace rdinv {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid grid, coefficient, boundary or command configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A reaction curve was evaluated outside its interval under ErrorOutside.
class RangeViolation : public Error {
public:
    RangeViolation(double u, double lo, double hi);
    double value() const noexcept { return u_; }
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }

private:
    double u_;
    double lo_;
    double hi_;
};

/// Non-finite state produced by the forward solver.
class BlowUpError : public Error {
public:
    BlowUpError(int step, int node);
    int step() const noexcept { return step_; }
    int node() const noexcept { return node_; }

private:
    int step_;
    int node_;
};

/// Picard inner iteration for the reaction term did not settle.
class StiffnessError : public Error {
public:
    using Error::Error;
};

/// Operation requested on a configuration it does not support.
class UnsupportedConfiguration : public Error {
public:
    using Error::Error;
};

/// Normal equations of the data smoother are singular.
class SmoothingError : public Error {
public:
    using Error::Error;
};

/// Data violate a monotonicity, slope or range condition needed by a scheme.
class ConditionViolation : public Error {
public:
    using Error::Error;
};

/// Data carry no usable information (e.g. vanishing Wronskian).
class DegenerateDataError : public Error {
public:
    using Error::Error;
};

/// Successive substitution for f diverged.
class ContractionFailure : public Error {
public:
    ContractionFailure(const std::string& what, double kappa)
        : Error(what), kappa_(kappa) {}
    double kappa_estimate() const noexcept { return kappa_; }

private:
    double kappa_;
};

/// Operation called without the state it depends on.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace rdinv
