#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "feddm/dataset.hpp"
#include "feddm/metrics.hpp"
#include "feddm/orchestrator.hpp"

namespace feddm {

// Configuration problems (parse errors, bad values) carry the offending
// field path; the CLI maps them to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class PartitionMode { kShard, kDirichlet };

struct ExperimentConfig {
    FlConfig fl;
    MixtureSpec mixture;
    PartitionMode partition = PartitionMode::kShard;
    double dirichlet_alpha = 0.3;
    std::size_t dataset_size = 4000;  // m
    std::size_t dim = 2;

    std::size_t diffusion_steps = 100;
    double beta_start = 1e-3;
    double beta_end = 0.15;

    std::vector<std::size_t> hidden_dims = {32, 32};
    std::size_t time_embed_dim = 8;

    double warmup_lr = 0.0;  // 0 means "use client_lr"

    // optional pre-round-0 training of the global model on the auxiliary
    // set (corrective variants only); 0 keeps the seeded random init
    std::size_t warm_start_epochs = 0;
    double warm_start_lr = 0.01;

    std::size_t eval_pool = 2000;   // slice of the global pool used for scoring
    std::size_t probe_size = 256;   // 0 disables the gradient-norm diagnostic
    std::size_t probe_batch = 64;

    bool theory_mode = false;       // stepsizes from L, work budgets in steps
    double theory_lipschitz = 1.0;

    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::size_t checkpoint_every = 0;
    bool save_warmup = true;
    bool save_dataset = false;
    bool timing = false;  // off keeps artifacts byte-reproducible

    void validate() const;  // throws ConfigError with field paths
    DenoiserConfig net_config() const;
    std::string partition_label() const;
};

// Flat-sectioned key-value text; unknown keys are errors.
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin);

struct RunArtifacts {
    double final_score = 0.0;
    std::size_t rounds_executed = 0;
    std::optional<std::size_t> early_exit_round;
    std::string round_log_path;
    std::string summary_path;
    std::string final_model_path;
};

// Full pipeline: generate, partition, warm up and synthesize the auxiliary
// data when the variant corrects, run the federated loop, write artifacts.
RunArtifacts run_experiment(const ExperimentConfig& config);

struct CompareRow {
    std::string variant;
    std::string partition;
    std::size_t n_seeds = 0;
    double score_mean = 0.0;
    double score_std = 0.0;
    double rounds_mean = 0.0;
    double rounds_std = 0.0;
    std::string early_exit;  // per-seed early-exit rounds, "-" when none
};

// Runs every (config, seed) pair and writes one table row per config.
// Configs must differ only in variant and/or partitioning.
std::vector<CompareRow> compare(const std::vector<std::string>& config_paths,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& out_dir);

// Shared helpers for the CLI's gradcheck/oracle subcommands.
struct CheckLine {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<CheckLine> run_gradcheck(std::uint64_t seed, std::size_t trials);
std::vector<CheckLine> run_oracle_suite(std::uint64_t seed);

}  // namespace feddm
