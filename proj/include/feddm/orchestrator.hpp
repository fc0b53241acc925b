#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "feddm/dataset.hpp"
#include "feddm/denoiser.hpp"
#include "feddm/metrics.hpp"

namespace feddm {

enum class Variant { kFedAvg, kFedProx, kFedDDPM, kFedDDPMPlus };

const char* variant_name(Variant v);

// Local/server work can be counted in raw SGD steps or in epochs of
// ceil(m / B) steps; theory mode uses steps, the experiments use epochs.
enum class WorkUnit { kSteps, kEpochs };

struct WorkBudget {
    WorkUnit unit = WorkUnit::kEpochs;
    std::size_t value = 1;
};

struct QuickTestConfig {
    double gamma = 0.4;
    double threshold = 0.2;
    std::size_t test_size = 500;
    std::size_t period = 10;  // evaluate when round % period == 0
};

struct FlConfig {
    std::size_t n_clients = 20;      // N
    double participation = 0.25;     // p
    std::size_t rounds = 200;        // T
    WorkBudget local_work{WorkUnit::kEpochs, 2};   // K
    WorkBudget server_work{WorkUnit::kEpochs, 1};  // E
    double client_lr = 0.02;         // zeta
    double server_lr = 0.01;         // eta
    std::size_t batch_size = 64;     // B
    Variant variant = Variant::kFedAvg;
    double fedprox_mu = 0.01;        // only read by FedProx
    QuickTestConfig quicktest;
    double aux_ratio = 0.1;          // rho
    std::size_t warmup_epochs = 40;
    std::size_t eval_every = 0;      // 0 = no periodic scoring
    bool weighted_aggregation = false;
    bool parallel_clients = true;

    void validate() const;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    ParamVector post_aggregation;
    ParamVector post_correction;
    double mean_client_loss = 0.0;
    std::optional<double> score;
};

struct RunResult {
    ParamVector final_params;
    std::vector<RoundRecord> records;
    std::optional<std::size_t> early_exit_round;
};

// Score callback: lower is better; round index only picks the eval stream.
using ScoreFn = std::function<double(const ParamVector&, std::size_t round)>;

// Independent local training per client, used before FL to synthesize the
// auxiliary dataset. Client i trains from its own derived stream.
std::vector<ParamVector> warmup(const std::vector<ClientDataset>& clients,
                                std::size_t epochs, double lr, std::size_t batch,
                                const NoiseSchedule& schedule,
                                const DenoiserConfig& config,
                                std::uint64_t base_seed);

// Uniform n-subset without replacement, n = max(floor(N * p), 1), ids sorted.
std::vector<std::size_t> select_clients(std::size_t n_clients, double p,
                                        RngStream& rng);

struct ClientUpdateResult {
    ParamVector params;
    double mean_loss = 0.0;
};

// K units of minibatch SGD on the noise-prediction loss over local data.
// FedProx adds mu * (w - anchor) to every gradient; other variants ignore
// the anchor.
ClientUpdateResult client_update(const ParamVector& start,
                                 const ClientDataset& local_data,
                                 WorkBudget work, double lr, std::size_t batch,
                                 Variant variant, double fedprox_mu,
                                 const ParamVector& anchor,
                                 const NoiseSchedule& schedule,
                                 const DenoiserConfig& config, RngStream& rng);

// w_hat = w_prev + sum_i q_i (w_i - w_prev); q uniform 1/n, or
// proportional to `weights` when given (size-weighted mode).
ParamVector aggregate(const ParamVector& global_prev,
                      const std::vector<ParamVector>& client_models,
                      const std::vector<double>* weights = nullptr);

// E units of minibatch SGD over the auxiliary dataset with stepsize lr.
// E = 0 returns agg unchanged.
ParamVector server_correct(const ParamVector& agg, const AuxiliaryDataset& aux,
                           WorkBudget work, double lr, std::size_t batch,
                           const NoiseSchedule& schedule,
                           const DenoiserConfig& config, RngStream& rng);

// Full federated loop. Every random draw comes from a stream derived from
// (master_seed, purpose, round, client), so trajectories are reproducible
// and independent of client scheduling. `aux` may be null for variants
// that never correct; `score_fn` is required by FedDDPM+ and by
// eval_every > 0. `initial_model` overrides the seeded random init
// (resume from a checkpoint, or a warm start).
RunResult run(const FlConfig& config, const std::vector<ClientDataset>& clients,
              const AuxiliaryDataset* aux, const NoiseSchedule& schedule,
              const DenoiserConfig& net_config, const ScoreFn& score_fn,
              std::uint64_t master_seed,
              const ParamVector* initial_model = nullptr);

struct TheoryParams {
    double lipschitz = 1.0;  // L

    void validate() const;
};

struct StepsizeReport {
    double eta = 0.0;   // 1 / (L E sqrt(T))
    double zeta = 0.0;  // 1 / (2 L K sqrt(T))
    bool sampling_constraint_ok = false;      // zeta K L <= n(N-1)/(N(n-1))
    bool sampling_constraint_vacuous = false; // n == 1 degenerates the bound
    double descent_margin = 0.0;  // 1/2 - 9K^2 z^2 L^2 - zL(N-n)/(2n(N-1)) (54K^3 z^2 L^2 + 3K)
    bool descent_margin_positive = false;
};

// Theory-mode stepsizes with the two constraints evaluated directly.
// K and E are SGD step counts here.
StepsizeReport theoretical_stepsizes(const TheoryParams& tp, std::size_t k_steps,
                                     std::size_t e_steps, std::size_t rounds,
                                     std::size_t n_clients, std::size_t n_selected);

}  // namespace feddm
