#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "perov/cli/commands.hpp"

namespace {

struct Args {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    double tol = 0.0;
    std::size_t max_iter = 0;
    unsigned threads = 0;
};

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--config", a.config, "model configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out, "output directory for report.json and CSV tables");
    cmd->add_option("--seed", a.seed, "seed for random initial values and verification samples");
    cmd->add_option("--tol", a.tol, "solver tolerance (spectral tolerance for spectral/classify)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-iter", a.max_iter, "iteration cap for solve")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", a.threads, "worker threads for operator sweeps")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perov-contraction value iteration for Markov dynamic programs"};
    app.require_subcommand(1);
    Args args;
    for (const char* verb : {"spectral", "solve", "classify", "compare-conditions"}) add_common(app.add_subcommand(verb), args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : perov::cli::exit_code::config_error;
    }
    const auto* cmd = app.get_subcommands().front();

    perov::cli::RunSettings settings;
    settings.out_dir = args.out;
    if (cmd->count("--seed")) settings.seed = args.seed;
    if (cmd->count("--tol")) settings.tol = args.tol;
    if (cmd->count("--max-iter")) settings.max_iter = args.max_iter;
    if (cmd->count("--threads")) settings.threads = args.threads;

    try {
        const auto cfg = perov::cli::load_config(args.config);
        return perov::cli::run_command(cmd->get_name(), cfg, settings, std::cout).exit_code;
    } catch (const perov::cli::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return perov::cli::exit_code::config_error;
    } catch (const perov::InvalidInput& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return perov::cli::exit_code::config_error;
    } catch (const perov::PreconditionError& e) {
        std::cerr << "cannot certify: " << e.what() << "\n";
        return perov::cli::exit_code::spectral_refusal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
