#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "rdinv/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Reconstruct a(x) and f(u) in u_t - (a u_x)_x = f(u) + r(x,t) from final-time data"};
    app.set_version_flag("--version", "rd-invert 0.1.0");

    std::string command;
    std::string config;
    std::string out;
    int jobs = 1;
    bool verbose = false;
    app.add_option("command", command, "forward, synth, invert, svd or sweep")
        ->required()
        ->check(CLI::IsMember({"forward", "synth", "invert", "svd", "sweep"}));
    app.add_option("--config", config, "JSON configuration file")->required();
    app.add_option("--out", out, "output directory (overrides output_dir)");
    app.add_option("--jobs", jobs, "worker threads for svd and sweep")->check(CLI::PositiveNumber);
    app.add_flag("--verbose", verbose, "print per-iteration diagnostics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : rdinv::kExitConfig;
    }

    rdinv::RunOptions opts;
    opts.jobs = jobs;
    opts.verbose = verbose;
    if (!out.empty()) {
        opts.out_dir = out;
    }
    try {
        opts.seed_override = rdinv::seed_from_environment();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return rdinv::kExitConfig;
    }
    return rdinv::run_command(rdinv::parse_command(command), config, opts, std::cout, std::cerr);
}
