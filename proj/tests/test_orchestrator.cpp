#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "feddm/orchestrator.hpp"

using namespace feddm;

namespace {

DenoiserConfig small_net() {
    DenoiserConfig c;
    c.input_dim = 2;
    c.hidden_dims = {8};
    c.time_embed_dim = 4;
    return c;
}

ClientDataset gaussian_client(std::size_t id, std::size_t m, const Sample& mu,
                              double sigma, std::uint64_t seed, int label = 0) {
    ClientDataset c;
    c.client_id = id;
    RngStream rng(seed);
    const auto spec = GaussianSpec::isotropic(mu, sigma * sigma);
    for (std::size_t i = 0; i < m; ++i) {
        c.samples.push_back({sample_gaussian(spec, rng), label});
    }
    return c;
}

std::vector<ClientDataset> micro_clients(std::size_t n, std::size_t m_each) {
    std::vector<ClientDataset> clients;
    for (std::size_t i = 0; i < n; ++i) {
        const double ang = 2.0 * 3.14159265358979 * static_cast<double>(i) /
                           static_cast<double>(n);
        clients.push_back(gaussian_client(
            i, m_each, {1.5 * std::cos(ang), 1.5 * std::sin(ang)}, 0.4,
            1000 + i, static_cast<int>(i)));
    }
    return clients;
}

AuxiliaryDataset micro_aux(const std::vector<ClientDataset>& clients,
                           std::uint64_t seed) {
    AuxiliaryDataset aux;
    RngStream rng(seed);
    for (const auto& c : clients) {
        const std::size_t k = c.size() / 10;
        aux.per_client_counts.push_back(k);
        for (std::size_t i = 0; i < k; ++i) {
            aux.samples.push_back(c.samples[rng.uniform_index(c.size())].point);
        }
    }
    return aux;
}

}  // namespace

TEST_CASE("client selection size and distinctness") {
    RngStream rng(1);
    CHECK(select_clients(100, 0.15, rng).size() == 15);
    CHECK(select_clients(10, 0.05, rng).size() == 1);  // max(floor, 1)
    CHECK(select_clients(7, 1.0, rng).size() == 7);

    for (int rep = 0; rep < 50; ++rep) {
        const auto ids = select_clients(20, 0.35, rng);
        REQUIRE(ids.size() == 7);
        std::set<std::size_t> uniq(ids.begin(), ids.end());
        CHECK(uniq.size() == ids.size());
        CHECK(*uniq.rbegin() < 20);
        CHECK(std::is_sorted(ids.begin(), ids.end()));
    }
    CHECK_THROWS_AS(select_clients(10, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(select_clients(10, 1.5, rng), std::invalid_argument);
}

TEST_CASE("selection is uniform across clients") {
    RngStream rng(77);
    const int draws = 100000;
    std::vector<int> hits(10, 0);
    for (int i = 0; i < draws; ++i) {
        for (std::size_t id : select_clients(10, 0.3, rng)) hits[id]++;
    }
    const double se = std::sqrt(0.3 * 0.7 / draws);
    for (int h : hits) {
        CHECK(std::fabs(h / static_cast<double>(draws) - 0.3) < 3.0 * se);
    }
}

TEST_CASE("client update: zero stepsize is the identity") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    const auto client = gaussian_client(0, 40, {1.0, 0.0}, 0.5, 3);
    RngStream init(5);
    const auto start = init_params(net, init);

    RngStream rng(6);
    const auto res = client_update(start, client, {WorkUnit::kEpochs, 2}, 0.0, 16,
                                   Variant::kFedAvg, 0.0, start, schedule, net, rng);
    CHECK(res.params == start);

    ClientDataset empty;
    RngStream rng2(6);
    CHECK_THROWS_AS(client_update(start, empty, {WorkUnit::kSteps, 1}, 0.1, 16,
                                  Variant::kFedAvg, 0.0, start, schedule, net, rng2),
                    std::invalid_argument);
}

TEST_CASE("single-sample single-step update is one gradient step") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    ClientDataset client;
    client.client_id = 0;
    client.samples.push_back({{0.7, -0.3}, 0});

    RngStream init(8);
    const auto start = init_params(net, init);
    const double zeta = 0.05;

    const std::uint64_t seed = 314;
    RngStream rng(seed);
    const auto res = client_update(start, client, {WorkUnit::kSteps, 1}, zeta, 1,
                                   Variant::kFedAvg, 0.0, start, schedule, net, rng);

    // replay the stream by hand: a one-element dataset shuffles without
    // drawing, then t and the noise vector are drawn for the single element
    RngStream replay(seed);
    const std::size_t t = 1 + replay.uniform_index(10);
    Sample eps = {replay.gaussian(), replay.gaussian()};
    const Sample xt = q_sample(schedule, client.samples[0].point, t, eps);
    const auto back = backward(start, net, xt, t, 10, eps);
    const auto want = axpy(start, back.grad, -zeta);
    CHECK(res.params == want);
    CHECK(res.mean_loss == back.loss);
}

TEST_CASE("fedprox with mu = 0 matches fedavg bit for bit") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    const auto client = gaussian_client(0, 64, {0.5, 0.5}, 0.4, 13);
    RngStream init(14);
    const auto start = init_params(net, init);
    RngStream anchor_rng(15);
    const auto anchor = init_params(net, anchor_rng);

    RngStream r1(99), r2(99);
    const auto avg = client_update(start, client, {WorkUnit::kEpochs, 2}, 0.03, 16,
                                   Variant::kFedAvg, 0.0, anchor, schedule, net, r1);
    const auto prox = client_update(start, client, {WorkUnit::kEpochs, 2}, 0.03, 16,
                                    Variant::kFedProx, 0.0, anchor, schedule, net, r2);
    CHECK(avg.params == prox.params);
    CHECK(avg.mean_loss == prox.mean_loss);
}

TEST_CASE("fedprox pulls toward the anchor") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    ClientDataset client;
    client.client_id = 0;
    client.samples.push_back({{0.7, -0.3}, 0});

    RngStream init(20);
    const auto start = init_params(net, init);
    RngStream anchor_rng(21);
    const auto anchor = init_params(net, anchor_rng);
    const double zeta = 0.05;
    const double mu = 0.7;

    RngStream r1(50);
    const auto prox = client_update(start, client, {WorkUnit::kSteps, 1}, zeta, 1,
                                    Variant::kFedProx, mu, anchor, schedule, net, r1);

    RngStream replay(50);
    const std::size_t t = 1 + replay.uniform_index(10);
    Sample eps = {replay.gaussian(), replay.gaussian()};
    const Sample xt = q_sample(schedule, client.samples[0].point, t, eps);
    auto back = backward(start, net, xt, t, 10, eps);
    for (std::size_t i = 0; i < back.grad.size(); ++i) {
        back.grad[i] += mu * (start[i] - anchor[i]);
    }
    CHECK(prox.params == axpy(start, back.grad, -zeta));
}

TEST_CASE("aggregation identities") {
    // dyadic values keep the arithmetic exact
    const ParamVector w = {0.5, -1.0, 2.0};
    const ParamVector up = {0.75, -0.75, 2.25};
    const ParamVector down = {0.25, -1.25, 1.75};

    CHECK(aggregate(w, {w, w, w}) == w);
    CHECK(aggregate(w, {up, down}) == w);
    CHECK(aggregate(w, {up}) == up);

    // size-weighted mode: weights 1:3 mix 0.25/0.75
    const std::vector<double> weights = {1.0, 3.0};
    const auto mixed = aggregate(w, {up, down}, &weights);
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(mixed[i] ==
              doctest::Approx(0.25 * up[i] + 0.75 * down[i]).epsilon(1e-15));
    }

    CHECK_THROWS_AS(aggregate(w, {}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate(w, {{1.0, 2.0}}), std::invalid_argument);
    const std::vector<double> bad = {1.0};
    CHECK_THROWS_AS(aggregate(w, {up, down}, &bad), std::invalid_argument);
}

TEST_CASE("server correction: disabled and zero-rate cases") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    RngStream init(30);
    const auto agg = init_params(net, init);

    AuxiliaryDataset aux;
    RngStream pool(31);
    for (int i = 0; i < 20; ++i) aux.samples.push_back({pool.gaussian(), pool.gaussian()});
    aux.per_client_counts = {20};

    RngStream r1(32);
    CHECK(server_correct(agg, aux, {WorkUnit::kEpochs, 0}, 0.1, 8, schedule, net, r1) ==
          agg);
    RngStream r2(33);
    CHECK(server_correct(agg, aux, {WorkUnit::kEpochs, 1}, 0.0, 8, schedule, net, r2) ==
          agg);

    AuxiliaryDataset empty;
    RngStream r3(34);
    CHECK_THROWS_AS(server_correct(agg, empty, {WorkUnit::kEpochs, 1}, 0.1, 8,
                                   schedule, net, r3),
                    std::invalid_argument);
}

TEST_CASE("one full-batch correction step equals the independent gradient step") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    RngStream init(40);
    const auto agg = init_params(net, init);

    AuxiliaryDataset aux;
    aux.samples = {{0.4, -0.2}, {-0.6, 0.9}};
    aux.per_client_counts = {2};
    const double eta = 0.07;

    const std::uint64_t seed = 2718;
    RngStream rng(seed);
    const auto corrected = server_correct(agg, aux, {WorkUnit::kSteps, 1}, eta, 2,
                                          schedule, net, rng);

    // independent evaluation: replay the shuffle, then accumulate the two
    // per-sample gradients in batch order and take one step
    RngStream replay(seed);
    std::size_t order[2] = {0, 1};
    std::swap(order[1], order[replay.uniform_index(2)]);
    GradientVector grad(agg.size(), 0.0);
    for (std::size_t b = 0; b < 2; ++b) {
        const Sample& x0 = aux.samples[order[b]];
        const std::size_t t = 1 + replay.uniform_index(10);
        Sample eps = {replay.gaussian(), replay.gaussian()};
        const Sample xt = q_sample(schedule, x0, t, eps);
        backward_into(agg, net, xt, t, 10, eps, grad);
    }
    for (double& g : grad) g *= 0.5;
    CHECK(corrected == axpy(agg, grad, -eta));
}

TEST_CASE("warmup basics") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    CHECK(warmup({}, 3, 0.01, 8, schedule, net, 1).empty());

    const std::vector<ClientDataset> clients = micro_clients(3, 30);
    const auto a = warmup(clients, 2, 0.01, 8, schedule, net, 55);
    const auto b = warmup(clients, 2, 0.01, 8, schedule, net, 55);
    REQUIRE(a.size() == 3);
    CHECK(a == b);
    // per-client streams: dropping a client leaves the others unchanged
    const std::vector<ClientDataset> fewer = {clients[0], clients[2]};
    const auto c = warmup(fewer, 2, 0.01, 8, schedule, net, 55);
    CHECK(c[0] == a[0]);
    CHECK(c[1] == a[2]);

    std::vector<ClientDataset> with_empty = {clients[0], ClientDataset{}};
    CHECK_THROWS_AS(warmup(with_empty, 2, 0.01, 8, schedule, net, 55),
                    std::invalid_argument);
}

TEST_CASE("a long warmup recovers the local gaussian moments") {
    DenoiserConfig net;
    net.input_dim = 2;
    net.hidden_dims = {32, 32};
    net.time_embed_dim = 8;
    const auto schedule = build_linear_schedule(50, 1e-3, 0.10);
    const Sample mu = {1.0, -0.5};
    const double sigma = 0.6;
    const auto client = gaussian_client(0, 400, mu, sigma, 3);

    const auto models = warmup({client}, 1500, 0.004, 16, schedule, net, 888);
    RngStream sample_rng(5);
    const std::size_t n = 1000;
    const auto samples = ancestral_sample(make_denoiser(models[0], net, 50),
                                          schedule, 2, n, sample_rng);
    double m0 = 0.0, m1 = 0.0;
    for (const auto& s : samples) {
        m0 += s[0];
        m1 += s[1];
    }
    m0 /= n;
    m1 /= n;
    const double se_mean = sigma / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(m0 - mu[0]) < 3.0 * se_mean);
    CHECK(std::fabs(m1 - mu[1]) < 3.0 * se_mean);

    double v0 = 0.0, v1 = 0.0;
    for (const auto& s : samples) {
        v0 += (s[0] - m0) * (s[0] - m0);
        v1 += (s[1] - m1) * (s[1] - m1);
    }
    v0 /= (n - 1);
    v1 /= (n - 1);
    const double se_var = sigma * sigma * std::sqrt(2.0 / n);
    CHECK(std::fabs(v0 - sigma * sigma) < 3.0 * se_var);
    CHECK(std::fabs(v1 - sigma * sigma) < 3.0 * se_var);
}

namespace {

FlConfig micro_config(Variant v) {
    FlConfig cfg;
    cfg.n_clients = 5;
    cfg.participation = 0.6;  // n = 3
    cfg.rounds = 3;
    cfg.local_work = {WorkUnit::kEpochs, 1};
    cfg.server_work = {WorkUnit::kEpochs, 1};
    cfg.client_lr = 0.03;
    cfg.server_lr = 0.02;
    cfg.batch_size = 16;
    cfg.variant = v;
    return cfg;
}

}  // namespace

TEST_CASE("run identities on a micro scenario") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    const auto clients = micro_clients(5, 40);
    const auto aux = micro_aux(clients, 123);

    auto fedavg_cfg = micro_config(Variant::kFedAvg);
    const auto fedavg = run(fedavg_cfg, clients, nullptr, schedule, net, {}, 42);
    REQUIRE(fedavg.records.size() == 3);

    // FedDDPM with E = 0 is FedAvg, bit for bit
    auto ddpm_cfg = micro_config(Variant::kFedDDPM);
    ddpm_cfg.server_work.value = 0;
    const auto ddpm0 = run(ddpm_cfg, clients, &aux, schedule, net, {}, 42);
    CHECK(ddpm0.final_params == fedavg.final_params);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(ddpm0.records[r].post_aggregation == fedavg.records[r].post_aggregation);
        CHECK(ddpm0.records[r].post_correction == fedavg.records[r].post_correction);
        CHECK(ddpm0.records[r].selected == fedavg.records[r].selected);
        CHECK(ddpm0.records[r].mean_client_loss == fedavg.records[r].mean_client_loss);
    }

    // FedProx with mu = 0 is FedAvg, bit for bit
    auto prox_cfg = micro_config(Variant::kFedProx);
    prox_cfg.fedprox_mu = 0.0;
    const auto prox = run(prox_cfg, clients, nullptr, schedule, net, {}, 42);
    CHECK(prox.final_params == fedavg.final_params);

    // parallel and sequential client execution agree bit for bit
    auto seq_cfg = fedavg_cfg;
    seq_cfg.parallel_clients = false;
    const auto seq = run(seq_cfg, clients, nullptr, schedule, net, {}, 42);
    CHECK(seq.final_params == fedavg.final_params);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(seq.records[r].post_correction == fedavg.records[r].post_correction);
    }

    // FedDDPM with E > 0 actually moves after aggregation
    auto ddpm_cfg2 = micro_config(Variant::kFedDDPM);
    const auto ddpm = run(ddpm_cfg2, clients, &aux, schedule, net, {}, 42);
    CHECK(ddpm.records[0].post_aggregation == fedavg.records[0].post_aggregation);
    CHECK(ddpm.records[0].post_correction != ddpm.records[0].post_aggregation);
}

TEST_CASE("quicktest gate drives the plus variant") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    const auto clients = micro_clients(5, 40);
    const auto aux = micro_aux(clients, 321);

    int eval_calls = 0;
    const ScoreFn fake_score = [&eval_calls](const ParamVector&, std::size_t) {
        ++eval_calls;
        return 1.0;  // constant scores plateau immediately
    };

    // gate closed: an impossible threshold means no trigger, all rounds run
    auto closed = micro_config(Variant::kFedDDPMPlus);
    closed.rounds = 9;
    closed.quicktest.period = 4;
    closed.quicktest.threshold = 1e-12;
    const ScoreFn noisy_score = [](const ParamVector& p, std::size_t round) {
        return 1.0 + 0.5 * static_cast<double>(round + 1) +
               1e-6 * p[0];  // strictly separated scores
    };
    const auto never = run(closed, clients, &aux, schedule, net, noisy_score, 7);
    CHECK(never.records.size() == 9);
    CHECK_FALSE(never.early_exit_round.has_value());
    for (const auto& rec : never.records) {
        CHECK(rec.post_aggregation == rec.post_correction);  // never corrected
    }

    // gate open: constant scores trigger at the second evaluation
    auto open = micro_config(Variant::kFedDDPMPlus);
    open.rounds = 20;
    open.quicktest.period = 4;
    open.quicktest.threshold = 0.5;
    eval_calls = 0;
    const auto once = run(open, clients, &aux, schedule, net, fake_score, 7);
    REQUIRE(once.early_exit_round.has_value());
    CHECK(*once.early_exit_round == 4);  // evals at rounds 0 and 4
    CHECK(once.records.size() == 5);
    CHECK(eval_calls == 2);
    // correction happens exactly once, at the exit round
    for (std::size_t r = 0; r + 1 < once.records.size(); ++r) {
        CHECK(once.records[r].post_aggregation == once.records[r].post_correction);
    }
    CHECK(once.records.back().post_aggregation !=
          once.records.back().post_correction);
    CHECK(once.final_params == once.records.back().post_correction);
}

TEST_CASE("theoretical stepsizes and constraint report") {
    // eta = 1 / (L E sqrt(T)), zeta = 1 / (2 L K sqrt(T))
    const auto a = theoretical_stepsizes(TheoryParams{1.0}, 2, 4, 100, 100, 15);
    CHECK(a.eta == doctest::Approx(0.025).epsilon(1e-15));
    CHECK(a.zeta == doctest::Approx(0.025).epsilon(1e-15));

    // direct substitution of the two conditions
    const double zeta = a.zeta;
    const double bound = 15.0 * 99.0 / (100.0 * 14.0);
    CHECK(a.sampling_constraint_ok == (zeta * 2.0 * 1.0 <= bound));
    CHECK_FALSE(a.sampling_constraint_vacuous);
    const double drift = (zeta * 1.0 * 85.0) / (2.0 * 15.0 * 99.0) *
                         (54.0 * 8.0 * zeta * zeta + 3.0 * 2.0);
    const double margin = 0.5 - 9.0 * 4.0 * zeta * zeta - drift;
    CHECK(a.descent_margin == doctest::Approx(margin).epsilon(1e-12));
    CHECK(a.descent_margin_positive == (margin > 0.0));

    // n = 1 degenerates the sampling bound; report it as vacuous
    const auto b = theoretical_stepsizes(TheoryParams{1.0}, 2, 4, 100, 10, 1);
    CHECK(b.sampling_constraint_vacuous);
    CHECK(b.sampling_constraint_ok);

    // full participation removes the drift term
    const auto c = theoretical_stepsizes(TheoryParams{2.0}, 8, 7, 300, 20, 20);
    CHECK(c.descent_margin ==
          doctest::Approx(0.5 - 9.0 * 64.0 * c.zeta * c.zeta * 4.0).epsilon(1e-12));

    CHECK_THROWS_AS(theoretical_stepsizes(TheoryParams{0.0}, 2, 4, 100, 10, 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(theoretical_stepsizes(TheoryParams{1.0}, 0, 4, 100, 10, 2),
                    std::invalid_argument);
}

TEST_CASE("run validates its inputs") {
    const auto net = small_net();
    const auto schedule = build_linear_schedule(10, 0.01, 0.2);
    const auto clients = micro_clients(5, 20);

    auto cfg = micro_config(Variant::kFedDDPM);
    CHECK_THROWS_AS(run(cfg, clients, nullptr, schedule, net, {}, 1),
                    std::invalid_argument);

    auto plus = micro_config(Variant::kFedDDPMPlus);
    const auto aux = micro_aux(clients, 5);
    CHECK_THROWS_AS(run(plus, clients, &aux, schedule, net, {}, 1),
                    std::invalid_argument);

    auto wrong_n = micro_config(Variant::kFedAvg);
    wrong_n.n_clients = 4;
    CHECK_THROWS_AS(run(wrong_n, clients, nullptr, schedule, net, {}, 1),
                    std::invalid_argument);
}
