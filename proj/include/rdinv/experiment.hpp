#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rdinv/core_types.hpp"
#include "rdinv/expression.hpp"
#include "rdinv/inversion.hpp"
#include "rdinv/observations.hpp"
#include "rdinv/sensitivity.hpp"

namespace rdinv {

enum class Command { Forward, Synth, Invert, Svd, Sweep };

/// Process exit codes of the command-line front end.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitForward = 3,
    kExitDataCondition = 4,
    kExitInversion = 5,
};

Command parse_command(const std::string& name);
const char* to_string(Command c) noexcept;

struct BoundarySpec {
    BoundaryKind kind = BoundaryKind::Impedance;
    double gamma = 0.0;
    std::string b = "0";  // expression in t
};

/// Forcing, initial value and boundary data of one data run.
struct RunSpec {
    std::string forcing = "0";  // expression in x and t
    std::string u0 = "0";       // expression in x
    BoundarySpec left;
    BoundarySpec right;
};

struct TruthSpec {
    std::string a;
    std::string f;
    double f_lo = -5.0;  // sampling interval of f for forward solves
    double f_hi = 30.0;
    int f_knots = 20001;
};

struct ObservationSpec {
    int n_x = 20;
    int n_t = 25;
    double noise = 0.0;
    NoiseDistribution distribution = NoiseDistribution::Uniform;
    BoundaryEnd trace_end = BoundaryEnd::Right;
    SmoothingOrder order_g = SmoothingOrder::H2;
    SmoothingOrder order_h = SmoothingOrder::H2;
    double lambda = 1e-8;
    /// Unset: discrepancy rule when noisy, fixed lambda otherwise.
    std::optional<LambdaRule> rule;
};

/// Sample files written by synth, relative to the manifest directory.
struct DataFiles {
    std::string g_u;
    std::string g_v;
    std::string h;
};

struct SweepSpec {
    std::string parameter;  // beta, noise, n_x or n_t
    std::vector<double> values;
    std::string shape = "x^2*(1-x)^2";  // u0 = beta * shape for the beta axis
};

/// One JSON document describing a command. Paths are resolved against `base_dir`.
struct ExperimentConfig {
    std::filesystem::path base_dir;
    std::uint64_t seed = 7;
    double length = 1.0;
    int n_cells = 200;
    double horizon = 0.5;
    int n_steps = 200;
    std::optional<TruthSpec> truth;
    RunSpec run_u;
    std::optional<RunSpec> run_v;
    ObservationSpec observations;
    SchemeConfig scheme;
    std::string a0 = "1";
    std::string f0 = "0";
    std::optional<DataFiles> data;
    std::optional<SweepSpec> sweep;
    SensitivitySetup sensitivity;
    std::string output_dir = "out";

    bool two_final() const noexcept { return scheme.scheme != Scheme::FinalPlusTrace; }
};

/// Parses and validates a configuration; every problem raises ConfigError.
ExperimentConfig parse_config(const std::string& json_text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// JSON form of a configuration. The ground truth is left out when `include_truth` is false.
std::string dump_config(const ExperimentConfig& cfg, bool include_truth = true);

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // overrides the config's output_dir
    int jobs = 1;
    bool verbose = false;
    std::optional<std::uint64_t> seed_override;
};

/// Reads RD_INVERT_SEED; throws ConfigError when it is not an unsigned integer.
std::optional<std::uint64_t> seed_from_environment();

/// Forward problem of one run with the given coefficients.
ProblemSpec build_problem(const ExperimentConfig& cfg, const RunSpec& run, const ScalarField& a,
                          const ReactionCurve& f);
ScalarField truth_a(const ExperimentConfig& cfg);
ReactionCurve truth_f(const ExperimentConfig& cfg);

/// Synthesized datasets: raw samples and their smoothed versions on the working grids.
struct SynthResult {
    std::optional<Samples> g_u, g_v, h;
    std::optional<SmoothedField> g_u_smooth, g_v_smooth;
    std::optional<SmoothedSeries> h_smooth;
    ConditionReport conditions;
};

SynthResult synthesize(const ExperimentConfig& cfg);
/// Smooths `samples` per the config and checks the scheme's conditions.
SynthResult smooth_samples(const ExperimentConfig& cfg, std::optional<Samples> g_u,
                           std::optional<Samples> g_v, std::optional<Samples> h);

struct InversionOutcome {
    ReconstructionResult result;
    std::optional<double> a_error;  // relative L2 against the declared truth
    std::optional<double> f_error;  // relative L2 on the central 80% of J
    std::vector<double> a_errors;   // per iterate
    std::vector<double> f_errors;
};

InversionOutcome invert(const ExperimentConfig& cfg, const SynthResult& data);

/// Runs a command and maps failures to exit codes; messages go to `log` and `err`.
int run_command(Command cmd, const ExperimentConfig& cfg, const RunOptions& opts,
                std::ostream& log, std::ostream& err);
int run_command(Command cmd, const std::filesystem::path& config_path, const RunOptions& opts,
                std::ostream& log, std::ostream& err);

}  // namespace rdinv
