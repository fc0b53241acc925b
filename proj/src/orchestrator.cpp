#include "feddm/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace feddm {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kFedAvg: return "FedAvg";
        case Variant::kFedProx: return "FedProx";
        case Variant::kFedDDPM: return "FedDDPM";
        case Variant::kFedDDPMPlus: return "FedDDPMPlus";
    }
    return "?";
}

void FlConfig::validate() const {
    if (n_clients < 1) throw std::invalid_argument("FlConfig: n_clients must be >= 1");
    if (!(participation > 0.0) || participation > 1.0) {
        throw std::invalid_argument("FlConfig: participation must be in (0, 1]");
    }
    if (rounds < 1) throw std::invalid_argument("FlConfig: rounds must be >= 1");
    if (local_work.value < 1) throw std::invalid_argument("FlConfig: K must be >= 1");
    if (!(client_lr > 0.0) || !(server_lr > 0.0)) {
        throw std::invalid_argument("FlConfig: learning rates must be > 0");
    }
    if (batch_size < 1) throw std::invalid_argument("FlConfig: batch_size must be >= 1");
    if (variant == Variant::kFedProx && fedprox_mu < 0.0) {
        throw std::invalid_argument("FlConfig: fedprox_mu must be >= 0");
    }
    if (!(quicktest.gamma > 0.0 && quicktest.gamma < 1.0)) {
        throw std::invalid_argument("FlConfig: quicktest gamma must be in (0, 1)");
    }
    if (!(quicktest.threshold > 0.0)) {
        throw std::invalid_argument("FlConfig: quicktest threshold must be > 0");
    }
    if (quicktest.test_size < 2 || quicktest.period < 1) {
        throw std::invalid_argument("FlConfig: quicktest test_size/period invalid");
    }
    if (!(aux_ratio > 0.0) || aux_ratio > 1.0) {
        throw std::invalid_argument("FlConfig: aux_ratio must be in (0, 1]");
    }
}

namespace {

struct SgdOutcome {
    double mean_loss = 0.0;
};

// Minibatch SGD on the noise-prediction loss over a point set. Batches come
// from a reshuffled index order so an "epoch" is one full pass; when the
// budget is in raw steps the same batch stream just continues across passes.
SgdOutcome sgd_train(ParamVector& params, const std::vector<Sample>& points,
                     WorkBudget work, double lr, std::size_t batch,
                     const NoiseSchedule& schedule, const DenoiserConfig& config,
                     RngStream& rng, const ParamVector* prox_anchor,
                     double prox_mu) {
    if (points.empty()) throw std::invalid_argument("sgd_train: empty dataset");
    const std::size_t m = points.size();
    const std::size_t steps_per_epoch = (m + batch - 1) / batch;
    const std::size_t total_steps = work.unit == WorkUnit::kEpochs
                                        ? work.value * steps_per_epoch
                                        : work.value;

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::size_t pos = m;  // forces an initial shuffle

    GradientVector grad(params.size());
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t step = 0; step < total_steps; ++step) {
        if (pos >= m) {
            for (std::size_t i = m - 1; i > 0; --i) {
                std::swap(order[i], order[rng.uniform_index(i + 1)]);
            }
            pos = 0;
        }
        const std::size_t take = std::min(batch, m - pos);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t b = 0; b < take; ++b) {
            const Sample& x0 = points[order[pos + b]];
            const std::size_t t = 1 + rng.uniform_index(schedule.steps);
            Sample eps(x0.size());
            for (double& e : eps) e = rng.gaussian();
            const Sample xt = q_sample(schedule, x0, t, eps);
            loss_sum += backward_into(params, config, xt, t, schedule.steps, eps, grad);
        }
        pos += take;
        seen += take;
        const double inv = 1.0 / static_cast<double>(take);
        for (double& g : grad) g *= inv;
        if (prox_anchor != nullptr && prox_mu != 0.0) {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                grad[i] += prox_mu * (params[i] - (*prox_anchor)[i]);
            }
        }
        axpy_inplace(params, grad, -lr);
    }
    SgdOutcome out;
    out.mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    return out;
}

std::vector<Sample> points_of(const ClientDataset& client) {
    std::vector<Sample> pts;
    pts.reserve(client.size());
    for (const auto& s : client.samples) pts.push_back(s.point);
    return pts;
}

}  // namespace

std::vector<ParamVector> warmup(const std::vector<ClientDataset>& clients,
                                std::size_t epochs, double lr, std::size_t batch,
                                const NoiseSchedule& schedule,
                                const DenoiserConfig& config,
                                std::uint64_t base_seed) {
    if (epochs < 1) throw std::invalid_argument("warmup: epochs must be >= 1");
    std::vector<ParamVector> models(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (clients[i].samples.empty()) {
            throw std::invalid_argument("warmup: empty client dataset");
        }
        RngStream rng(derive_seed(base_seed, {stream::kWarmup, clients[i].client_id}));
        ParamVector params = init_params(config, rng);
        const auto pts = points_of(clients[i]);
        sgd_train(params, pts, {WorkUnit::kEpochs, epochs}, lr, batch, schedule,
                  config, rng, nullptr, 0.0);
        models[i] = std::move(params);
    }
    return models;
}

std::vector<std::size_t> select_clients(std::size_t n_clients, double p,
                                        RngStream& rng) {
    if (!(p > 0.0) || p > 1.0) {
        throw std::invalid_argument("select_clients: p must be in (0, 1]");
    }
    const double raw = static_cast<double>(n_clients) * p;
    std::size_t n = static_cast<std::size_t>(std::floor(raw + 1e-12));
    if (n < 1) n = 1;
    if (n > n_clients) n = n_clients;

    std::vector<std::size_t> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_index(n_clients - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ClientUpdateResult client_update(const ParamVector& start,
                                 const ClientDataset& local_data,
                                 WorkBudget work, double lr, std::size_t batch,
                                 Variant variant, double fedprox_mu,
                                 const ParamVector& anchor,
                                 const NoiseSchedule& schedule,
                                 const DenoiserConfig& config, RngStream& rng) {
    if (local_data.samples.empty()) {
        throw std::invalid_argument("client_update: empty client dataset");
    }
    ClientUpdateResult res;
    res.params = start;
    const auto pts = points_of(local_data);
    const bool prox = variant == Variant::kFedProx && fedprox_mu != 0.0;
    const auto outcome = sgd_train(res.params, pts, work, lr, batch, schedule,
                                   config, rng, prox ? &anchor : nullptr,
                                   prox ? fedprox_mu : 0.0);
    res.mean_loss = outcome.mean_loss;
    return res;
}

ParamVector aggregate(const ParamVector& global_prev,
                      const std::vector<ParamVector>& client_models,
                      const std::vector<double>* weights) {
    if (client_models.empty()) {
        throw std::invalid_argument("aggregate: no client models");
    }
    if (weights != nullptr && weights->size() != client_models.size()) {
        throw std::invalid_argument("aggregate: weights length mismatch");
    }
    double total = 0.0;
    if (weights) {
        for (double w : *weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("aggregate: weights sum to 0");
    }

    ParamVector delta(global_prev.size(), 0.0);
    for (std::size_t i = 0; i < client_models.size(); ++i) {
        const auto& cm = client_models[i];
        if (cm.size() != global_prev.size()) {
            throw std::invalid_argument("aggregate: model length mismatch");
        }
        const double q = weights ? (*weights)[i] / total
                                 : 1.0 / static_cast<double>(client_models.size());
        for (std::size_t j = 0; j < delta.size(); ++j) {
            delta[j] += q * (cm[j] - global_prev[j]);
        }
    }
    return axpy(global_prev, delta, 1.0);
}

ParamVector server_correct(const ParamVector& agg, const AuxiliaryDataset& aux,
                           WorkBudget work, double lr, std::size_t batch,
                           const NoiseSchedule& schedule,
                           const DenoiserConfig& config, RngStream& rng) {
    if (work.value == 0) return agg;
    if (aux.samples.empty()) {
        throw std::invalid_argument("server_correct: auxiliary dataset is empty");
    }
    ParamVector params = agg;
    sgd_train(params, aux.samples, work, lr, batch, schedule, config, rng,
              nullptr, 0.0);
    return params;
}

RunResult run(const FlConfig& config, const std::vector<ClientDataset>& clients,
              const AuxiliaryDataset* aux, const NoiseSchedule& schedule,
              const DenoiserConfig& net_config, const ScoreFn& score_fn,
              std::uint64_t master_seed, const ParamVector* initial_model) {
    config.validate();
    if (clients.size() != config.n_clients) {
        throw std::invalid_argument("run: clients list does not match n_clients");
    }
    const bool corrects = config.variant == Variant::kFedDDPM ||
                          config.variant == Variant::kFedDDPMPlus;
    if (corrects && config.server_work.value > 0 &&
        (aux == nullptr || aux->samples.empty())) {
        throw std::invalid_argument("run: correction variant needs an auxiliary dataset");
    }
    if (config.variant == Variant::kFedDDPMPlus && !score_fn) {
        throw std::invalid_argument("run: FedDDPM+ needs a score function");
    }
    if (config.eval_every > 0 && !score_fn) {
        throw std::invalid_argument("run: eval_every > 0 needs a score function");
    }

    ParamVector global;
    if (initial_model != nullptr) {
        if (initial_model->size() != param_count(net_config)) {
            throw std::invalid_argument("run: initial model length mismatch");
        }
        global = *initial_model;
    } else {
        RngStream init_rng(derive_seed(master_seed, {stream::kInitModel}));
        global = init_params(net_config, init_rng);
    }

    EmaState ema;
    ema.gamma = config.quicktest.gamma;
    ema.threshold = config.quicktest.threshold;
    ema.test_size = config.quicktest.test_size;

    RunResult result;
    result.records.reserve(config.rounds);

    for (std::size_t round = 0; round < config.rounds; ++round) {
        RngStream select_rng(derive_seed(master_seed, {stream::kSelect, round}));
        const auto selected =
            select_clients(config.n_clients, config.participation, select_rng);
        const std::size_t n = selected.size();

        std::vector<ClientUpdateResult> updates(n);
        auto run_client = [&](std::size_t slot) {
            const std::size_t cid = selected[slot];
            RngStream rng(derive_seed(master_seed, {stream::kClient, round, cid}));
            updates[slot] = client_update(global, clients[cid], config.local_work,
                                          config.client_lr, config.batch_size,
                                          config.variant, config.fedprox_mu, global,
                                          schedule, net_config, rng);
        };
        if (config.parallel_clients && n > 1) {
            std::vector<std::thread> workers;
            workers.reserve(n);
            for (std::size_t s = 0; s < n; ++s) workers.emplace_back(run_client, s);
            for (auto& w : workers) w.join();
        } else {
            for (std::size_t s = 0; s < n; ++s) run_client(s);
        }

        std::vector<ParamVector> models;
        models.reserve(n);
        double loss_sum = 0.0;
        std::vector<double> weights;
        for (std::size_t s = 0; s < n; ++s) {
            models.push_back(std::move(updates[s].params));
            loss_sum += updates[s].mean_loss;
            weights.push_back(static_cast<double>(clients[selected[s]].size()));
        }
        ParamVector aggregated = aggregate(
            global, models, config.weighted_aggregation ? &weights : nullptr);

        RoundRecord rec;
        rec.round = round;
        rec.selected = selected;
        rec.mean_client_loss = loss_sum / static_cast<double>(n);
        rec.post_aggregation = aggregated;

        bool exit_early = false;
        if (config.variant == Variant::kFedDDPM) {
            RngStream server_rng(derive_seed(master_seed, {stream::kServer, round}));
            global = server_correct(aggregated, *aux, config.server_work,
                                    config.server_lr, config.batch_size, schedule,
                                    net_config, server_rng);
        } else if (config.variant == Variant::kFedDDPMPlus &&
                   round % config.quicktest.period == 0) {
            const double score = score_fn(aggregated, round);
            rec.score = score;
            const auto qt = quick_test(ema, score);
            ema = qt.state;
            if (qt.trigger) {
                // one-shot correction, then stop
                RngStream server_rng(derive_seed(master_seed, {stream::kServer, round}));
                global = server_correct(aggregated, *aux, config.server_work,
                                        config.server_lr, config.batch_size,
                                        schedule, net_config, server_rng);
                result.early_exit_round = round;
                exit_early = true;
            } else {
                global = std::move(aggregated);
            }
        } else {
            global = std::move(aggregated);
        }

        if (!rec.score.has_value() && config.eval_every > 0 &&
            (round + 1) % config.eval_every == 0) {
            rec.score = score_fn(global, round);
        }
        rec.post_correction = global;
        result.records.push_back(std::move(rec));
        if (exit_early) break;
    }

    result.final_params = global;
    return result;
}

void TheoryParams::validate() const {
    if (!(lipschitz > 0.0)) {
        throw std::invalid_argument("TheoryParams: L must be > 0");
    }
}

StepsizeReport theoretical_stepsizes(const TheoryParams& tp, std::size_t k_steps,
                                     std::size_t e_steps, std::size_t rounds,
                                     std::size_t n_clients, std::size_t n_selected) {
    tp.validate();
    if (k_steps < 1 || e_steps < 1 || rounds < 1 || n_clients < 1 ||
        n_selected < 1 || n_selected > n_clients) {
        throw std::invalid_argument("theoretical_stepsizes: invalid inputs");
    }
    const double l = tp.lipschitz;
    const double k = static_cast<double>(k_steps);
    const double e = static_cast<double>(e_steps);
    const double sqrt_t = std::sqrt(static_cast<double>(rounds));
    const double big_n = static_cast<double>(n_clients);
    const double small_n = static_cast<double>(n_selected);

    StepsizeReport rep;
    rep.eta = 1.0 / (l * e * sqrt_t);
    rep.zeta = 1.0 / (2.0 * l * k * sqrt_t);

    if (n_selected == 1) {
        rep.sampling_constraint_vacuous = true;
        rep.sampling_constraint_ok = true;
    } else {
        const double bound = small_n * (big_n - 1.0) / (big_n * (small_n - 1.0));
        rep.sampling_constraint_ok = rep.zeta * k * l <= bound;
    }

    const double zl = rep.zeta * l;
    double drift = 0.0;
    if (n_clients > n_selected) {
        drift = (zl * (big_n - small_n)) / (2.0 * small_n * (big_n - 1.0)) *
                (54.0 * k * k * k * zl * zl + 3.0 * k);
    }
    rep.descent_margin = 0.5 - 9.0 * k * k * zl * zl - drift;
    rep.descent_margin_positive = rep.descent_margin > 0.0;
    return rep;
}

}  // namespace feddm
