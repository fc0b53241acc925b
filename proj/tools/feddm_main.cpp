// Command-line entry point for the federated diffusion simulator.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "feddm/experiment.hpp"

namespace {

std::vector<std::string> read_list_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw feddm::ConfigError("cannot open list file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::stringstream ss(line);
        std::string token;
        if (ss >> token) lines.push_back(token);
    }
    return lines;
}

int print_checks(const std::vector<feddm::CheckLine>& lines) {
    bool all_ok = true;
    for (const auto& l : lines) {
        std::cout << (l.passed ? "[PASS] " : "[FAIL] ") << l.name << ": "
                  << l.detail << '\n';
        all_ok = all_ok && l.passed;
    }
    return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated training simulator for small denoising diffusion models"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool has_seed = false;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config file");
        if (need_config) opt->required();
        cmd->add_option("--out", out_override, "override the output directory");
        cmd->add_option("--seed", seed_override, "override the seed")
            ->each([&](const std::string&) { has_seed = true; });
    };

    auto* run_cmd = app.add_subcommand("run", "run one experiment");
    add_common(run_cmd, true);

    auto* compare_cmd =
        app.add_subcommand("compare", "run a sweep of configs and tabulate results");
    std::string list_path;
    std::vector<std::uint64_t> seeds;
    compare_cmd->add_option("--list", list_path, "file with one config path per line")
        ->required();
    compare_cmd->add_option("--seeds", seeds, "seeds to replicate each config over");
    compare_cmd->add_option("--out", out_override, "output directory")->required();

    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
    std::uint64_t check_seed = 12345;
    std::size_t trials = 20;
    gradcheck_cmd->add_option("--seed", check_seed, "seed for the random configurations");
    gradcheck_cmd->add_option("--trials", trials, "number of random configurations");

    auto* oracle_cmd = app.add_subcommand(
        "oracle", "sampling checks against the analytic Gaussian denoiser");
    std::uint64_t oracle_seed = 12345;
    oracle_cmd->add_option("--seed", oracle_seed, "seed for the oracle runs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            feddm::ExperimentConfig cfg = feddm::parse_experiment_config(config_path);
            if (has_seed) cfg.seed = seed_override;
            if (!out_override.empty()) cfg.out_dir = out_override;
            const auto art = feddm::run_experiment(cfg);
            std::cout << "rounds_executed = " << art.rounds_executed << '\n';
            if (art.early_exit_round.has_value()) {
                std::cout << "early_exit_round = " << *art.early_exit_round << '\n';
            }
            std::cout << "final_score = " << art.final_score << '\n';
            std::cout << "round_log = " << art.round_log_path << '\n';
            std::cout << "summary = " << art.summary_path << '\n';
            return 0;
        }
        if (compare_cmd->parsed()) {
            const auto configs = read_list_file(list_path);
            const auto rows = feddm::compare(configs, seeds, out_override);
            std::cout << "variant,partition,n_seeds,score_mean,score_std,"
                         "rounds_mean,rounds_std,early_exit_rounds\n";
            for (const auto& r : rows) {
                std::cout << r.variant << ',' << r.partition << ',' << r.n_seeds
                          << ',' << r.score_mean << ',' << r.score_std << ','
                          << r.rounds_mean << ',' << r.rounds_std << ','
                          << r.early_exit << '\n';
            }
            return 0;
        }
        if (gradcheck_cmd->parsed()) {
            return print_checks(feddm::run_gradcheck(check_seed, trials));
        }
        if (oracle_cmd->parsed()) {
            return print_checks(feddm::run_oracle_suite(oracle_seed));
        }
    } catch (const feddm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
