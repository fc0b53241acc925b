#include "feddm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace feddm {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Parsed key-value file with consumption tracking, so leftover keys can be
// reported as unknown fields.
class KvReader {
public:
    KvReader(const std::string& text, std::string origin)
        : origin_(std::move(origin)) {
        std::istringstream in(text);
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    fail("", "", "malformed section header at line " +
                                     std::to_string(lineno));
                }
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                fail(section, "", "expected 'key = value' at line " +
                                      std::to_string(lineno));
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                fail(section, "", "empty key at line " + std::to_string(lineno));
            }
            values_[section + "." + key] = value;
        }
    }

    [[noreturn]] void fail(const std::string& section, const std::string& key,
                           const std::string& msg) const {
        std::string path = section.empty() ? key : section + "." + key;
        if (!path.empty()) path += ": ";
        throw ConfigError(origin_ + ": " + path + msg);
    }

    bool has(const std::string& section, const std::string& key) const {
        return values_.count(section + "." + key) > 0;
    }

    std::string raw(const std::string& section, const std::string& key) {
        consumed_.insert(section + "." + key);
        return values_.at(section + "." + key);
    }

    std::string get_string(const std::string& s, const std::string& k,
                           const std::string& dflt) {
        return has(s, k) ? raw(s, k) : dflt;
    }

    double get_double(const std::string& s, const std::string& k, double dflt) {
        if (!has(s, k)) return dflt;
        try {
            std::size_t pos = 0;
            const std::string v = raw(s, k);
            const double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing junk");
            return out;
        } catch (const std::exception&) {
            fail(s, k, "not a number");
        }
    }

    std::uint64_t get_u64(const std::string& s, const std::string& k,
                          std::uint64_t dflt) {
        if (!has(s, k)) return dflt;
        try {
            std::size_t pos = 0;
            const std::string v = raw(s, k);
            const std::uint64_t out = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing junk");
            return out;
        } catch (const std::exception&) {
            fail(s, k, "not a non-negative integer");
        }
    }

    bool get_bool(const std::string& s, const std::string& k, bool dflt) {
        if (!has(s, k)) return dflt;
        const std::string v = raw(s, k);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(s, k, "expected true/false");
    }

    std::vector<double> get_doubles(const std::string& s, const std::string& k) {
        std::istringstream in(raw(s, k));
        std::vector<double> out;
        double v;
        while (in >> v) out.push_back(v);
        if (!in.eof()) fail(s, k, "not a list of numbers");
        return out;
    }

    void finish() const {
        for (const auto& [path, value] : values_) {
            if (!consumed_.count(path)) {
                throw ConfigError(origin_ + ": unknown key '" + path + "'");
            }
        }
    }

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

MixtureSpec default_ring_mixture() {
    // four equally weighted isotropic components on the axes
    MixtureSpec mix;
    const double r = 2.0;
    const double sigma = 0.35;
    const std::vector<Sample> means = {{r, 0.0}, {0.0, r}, {-r, 0.0}, {0.0, -r}};
    for (std::size_t i = 0; i < means.size(); ++i) {
        MixtureSpec::Component c;
        c.weight = 0.25;
        c.gaussian = GaussianSpec::isotropic(means[i], sigma * sigma);
        c.label = static_cast<int>(i);
        mix.components.push_back(std::move(c));
    }
    return mix;
}

Variant parse_variant(KvReader& kv, const std::string& raw) {
    if (raw == "FedAvg") return Variant::kFedAvg;
    if (raw == "FedProx") return Variant::kFedProx;
    if (raw == "FedDDPM") return Variant::kFedDDPM;
    if (raw == "FedDDPMPlus" || raw == "FedDDPM+") return Variant::kFedDDPMPlus;
    kv.fail("experiment", "variant",
            "unknown variant '" + raw +
                "' (expected FedAvg, FedProx, FedDDPM or FedDDPM+)");
}

WorkUnit parse_unit(KvReader& kv, const std::string& section,
                    const std::string& key, const std::string& raw) {
    if (raw == "epochs") return WorkUnit::kEpochs;
    if (raw == "steps") return WorkUnit::kSteps;
    kv.fail(section, key, "expected 'epochs' or 'steps'");
}

}  // namespace

void ExperimentConfig::validate() const {
    try {
        fl.validate();
        mixture.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (dataset_size < 1) throw ConfigError("data.m: must be >= 1");
    if (dim < 1) throw ConfigError("data.dim: must be >= 1");
    if (mixture.dim() != dim) {
        throw ConfigError("mixture: component dimension does not match data.dim");
    }
    if (partition == PartitionMode::kDirichlet && !(dirichlet_alpha > 0.0)) {
        throw ConfigError("data.dirichlet_alpha: must be > 0");
    }
    if (diffusion_steps < 1) throw ConfigError("diffusion.steps: must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ConfigError("diffusion: need 0 < beta_start <= beta_end < 1");
    }
    if (eval_pool < 2) throw ConfigError("data.eval_pool: must be >= 2");
    if (probe_size > 0 && probe_batch < 1) {
        throw ConfigError("probe.batch: must be >= 1");
    }
    if (theory_mode && !(theory_lipschitz > 0.0)) {
        throw ConfigError("theory.lipschitz: must be > 0");
    }
    if (warmup_lr < 0.0) throw ConfigError("fl.warmup_lr: must be >= 0");
    if (warm_start_epochs > 0) {
        if (!(warm_start_lr > 0.0)) {
            throw ConfigError("fl.warm_start_lr: must be > 0");
        }
        if (fl.variant != Variant::kFedDDPM && fl.variant != Variant::kFedDDPMPlus) {
            throw ConfigError(
                "fl.warm_start_epochs: warm start needs an auxiliary dataset "
                "(FedDDPM or FedDDPM+)");
        }
    }
    try {
        net_config().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
}

DenoiserConfig ExperimentConfig::net_config() const {
    DenoiserConfig c;
    c.input_dim = dim;
    c.hidden_dims = hidden_dims;
    c.time_embed_dim = time_embed_dim;
    return c;
}

std::string ExperimentConfig::partition_label() const {
    if (partition == PartitionMode::kShard) return "shard";
    return "dirichlet(" + fmt_double(dirichlet_alpha) + ")";
}

ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin) {
    KvReader kv(text, origin);
    ExperimentConfig cfg;

    cfg.seed = kv.get_u64("experiment", "seed", cfg.seed);
    cfg.out_dir = kv.get_string("experiment", "out", cfg.out_dir);
    cfg.fl.variant = parse_variant(kv, kv.get_string("experiment", "variant", "FedAvg"));

    cfg.dataset_size = kv.get_u64("data", "m", cfg.dataset_size);
    cfg.dim = kv.get_u64("data", "dim", cfg.dim);
    const std::string part = kv.get_string("data", "partition", "shard");
    if (part == "shard") {
        cfg.partition = PartitionMode::kShard;
    } else if (part == "dirichlet") {
        cfg.partition = PartitionMode::kDirichlet;
    } else {
        kv.fail("data", "partition", "expected 'shard' or 'dirichlet'");
    }
    cfg.dirichlet_alpha = kv.get_double("data", "dirichlet_alpha", cfg.dirichlet_alpha);
    cfg.eval_pool = kv.get_u64("data", "eval_pool", cfg.eval_pool);

    cfg.diffusion_steps = kv.get_u64("diffusion", "steps", cfg.diffusion_steps);
    cfg.beta_start = kv.get_double("diffusion", "beta_start", cfg.beta_start);
    cfg.beta_end = kv.get_double("diffusion", "beta_end", cfg.beta_end);

    if (kv.has("model", "hidden")) {
        cfg.hidden_dims.clear();
        for (double v : kv.get_doubles("model", "hidden")) {
            if (v < 1 || v != std::floor(v)) {
                kv.fail("model", "hidden", "widths must be positive integers");
            }
            cfg.hidden_dims.push_back(static_cast<std::size_t>(v));
        }
    }
    cfg.time_embed_dim = kv.get_u64("model", "time_embed_dim", cfg.time_embed_dim);

    FlConfig& fl = cfg.fl;
    fl.n_clients = kv.get_u64("fl", "n_clients", fl.n_clients);
    fl.participation = kv.get_double("fl", "participation", fl.participation);
    fl.rounds = kv.get_u64("fl", "rounds", fl.rounds);
    fl.local_work.unit = parse_unit(kv, "fl", "local_unit",
                                    kv.get_string("fl", "local_unit", "epochs"));
    fl.local_work.value = kv.get_u64("fl", "local_value", fl.local_work.value);
    fl.server_work.unit = parse_unit(kv, "fl", "server_unit",
                                     kv.get_string("fl", "server_unit", "epochs"));
    fl.server_work.value = kv.get_u64("fl", "server_value", fl.server_work.value);
    fl.client_lr = kv.get_double("fl", "client_lr", fl.client_lr);
    fl.server_lr = kv.get_double("fl", "server_lr", fl.server_lr);
    fl.batch_size = kv.get_u64("fl", "batch_size", fl.batch_size);
    fl.fedprox_mu = kv.get_double("fl", "fedprox_mu", fl.fedprox_mu);
    fl.aux_ratio = kv.get_double("fl", "aux_ratio", fl.aux_ratio);
    fl.warmup_epochs = kv.get_u64("fl", "warmup_epochs", fl.warmup_epochs);
    fl.eval_every = kv.get_u64("fl", "eval_every", fl.eval_every);
    fl.weighted_aggregation =
        kv.get_bool("fl", "weighted_aggregation", fl.weighted_aggregation);
    fl.parallel_clients = kv.get_bool("fl", "parallel_clients", fl.parallel_clients);
    cfg.warmup_lr = kv.get_double("fl", "warmup_lr", cfg.warmup_lr);
    cfg.warm_start_epochs = kv.get_u64("fl", "warm_start_epochs", cfg.warm_start_epochs);
    cfg.warm_start_lr = kv.get_double("fl", "warm_start_lr", cfg.warm_start_lr);

    fl.quicktest.gamma = kv.get_double("quicktest", "gamma", fl.quicktest.gamma);
    fl.quicktest.threshold =
        kv.get_double("quicktest", "threshold", fl.quicktest.threshold);
    fl.quicktest.test_size = kv.get_u64("quicktest", "test_size", fl.quicktest.test_size);
    fl.quicktest.period = kv.get_u64("quicktest", "period", fl.quicktest.period);

    cfg.probe_size = kv.get_u64("probe", "size", cfg.probe_size);
    cfg.probe_batch = kv.get_u64("probe", "batch", cfg.probe_batch);

    cfg.theory_mode = kv.get_bool("theory", "enabled", cfg.theory_mode);
    cfg.theory_lipschitz = kv.get_double("theory", "lipschitz", cfg.theory_lipschitz);

    cfg.checkpoint_every = kv.get_u64("output", "checkpoint_every", cfg.checkpoint_every);
    cfg.save_warmup = kv.get_bool("output", "save_warmup", cfg.save_warmup);
    cfg.save_dataset = kv.get_bool("output", "save_dataset", cfg.save_dataset);
    cfg.timing = kv.get_bool("output", "timing", cfg.timing);

    if (kv.has("mixture", "components")) {
        const std::size_t n = kv.get_u64("mixture", "components", 0);
        if (n < 1) kv.fail("mixture", "components", "must be >= 1");
        MixtureSpec mix;
        for (std::size_t i = 0; i < n; ++i) {
            const std::string suffix = "_" + std::to_string(i);
            MixtureSpec::Component c;
            c.weight = kv.get_double("mixture", "weight" + suffix, -1.0);
            if (c.weight < 0.0) kv.fail("mixture", "weight" + suffix, "missing");
            if (!kv.has("mixture", "mean" + suffix)) {
                kv.fail("mixture", "mean" + suffix, "missing");
            }
            Sample mean = kv.get_doubles("mixture", "mean" + suffix);
            if (kv.has("mixture", "cov" + suffix)) {
                const auto flat = kv.get_doubles("mixture", "cov" + suffix);
                if (flat.size() != mean.size() * mean.size()) {
                    kv.fail("mixture", "cov" + suffix, "expected dim*dim entries");
                }
                Matrix cov(mean.size());
                cov.a = flat;
                c.gaussian.mean = std::move(mean);
                c.gaussian.covariance = std::move(cov);
            } else {
                const double sigma = kv.get_double("mixture", "sigma" + suffix, -1.0);
                if (!(sigma > 0.0)) {
                    kv.fail("mixture", "sigma" + suffix, "missing or not > 0");
                }
                c.gaussian = GaussianSpec::isotropic(std::move(mean), sigma * sigma);
            }
            c.label = static_cast<int>(
                kv.get_u64("mixture", "label" + suffix, i));
            mix.components.push_back(std::move(c));
        }
        cfg.mixture = std::move(mix);
    } else if (cfg.dim == 2) {
        cfg.mixture = default_ring_mixture();
    } else {
        throw ConfigError(origin + ": mixture section required when data.dim != 2");
    }

    kv.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config_text(ss.str(), path);
}

namespace {

struct PreparedRun {
    NoiseSchedule schedule;
    DenoiserConfig net;
    std::vector<ClientDataset> clients;
    AuxiliaryDataset aux;
    std::vector<Sample> eval_pool;
    std::vector<std::vector<ProbeItem>> probe;
    FlConfig fl;
};

PreparedRun prepare(const ExperimentConfig& cfg, const std::string& out_dir) {
    PreparedRun prep;
    prep.schedule = build_linear_schedule(cfg.diffusion_steps, cfg.beta_start,
                                          cfg.beta_end);
    prep.net = cfg.net_config();
    prep.fl = cfg.fl;

    RngStream data_rng(derive_seed(cfg.seed, {stream::kData}));
    const auto global = generate_global_dataset(cfg.mixture, cfg.dataset_size, data_rng);

    if (cfg.save_dataset && !out_dir.empty()) {
        dump_labeled_samples(out_dir + "/dataset.csv", global);
    }

    RngStream part_rng(derive_seed(cfg.seed, {stream::kPartition}));
    prep.clients = cfg.partition == PartitionMode::kShard
                       ? partition_shard(global, cfg.fl.n_clients, part_rng)
                       : partition_dirichlet(global, cfg.fl.n_clients,
                                             cfg.dirichlet_alpha, part_rng);

    // scoring pool: leading slice of the (i.i.d.) global training pool
    const std::size_t pool_n = std::min(cfg.eval_pool, global.size());
    prep.eval_pool.reserve(pool_n);
    for (std::size_t i = 0; i < pool_n; ++i) prep.eval_pool.push_back(global[i].point);

    // frozen probe for the stationarity diagnostic
    if (cfg.probe_size > 0) {
        RngStream probe_rng(derive_seed(cfg.seed, {stream::kProbe}));
        std::vector<ProbeItem> batch;
        for (std::size_t i = 0; i < cfg.probe_size; ++i) {
            ProbeItem item;
            item.x0 = global[i % global.size()].point;
            item.t = 1 + probe_rng.uniform_index(prep.schedule.steps);
            item.eps.resize(cfg.dim);
            for (double& e : item.eps) e = probe_rng.gaussian();
            batch.push_back(std::move(item));
            if (batch.size() == cfg.probe_batch) {
                prep.probe.push_back(std::move(batch));
                batch.clear();
            }
        }
        if (!batch.empty()) prep.probe.push_back(std::move(batch));
    }

    if (cfg.theory_mode) {
        // Theorem-mode stepsizes; K and E are counted in raw SGD steps.
        prep.fl.local_work.unit = WorkUnit::kSteps;
        prep.fl.server_work.unit = WorkUnit::kSteps;
        const std::size_t n_sel = std::max<std::size_t>(
            static_cast<std::size_t>(std::floor(
                static_cast<double>(prep.fl.n_clients) * prep.fl.participation + 1e-12)),
            1);
        const auto rep = theoretical_stepsizes(
            TheoryParams{cfg.theory_lipschitz}, prep.fl.local_work.value,
            std::max<std::size_t>(prep.fl.server_work.value, 1), prep.fl.rounds,
            prep.fl.n_clients, n_sel);
        prep.fl.client_lr = rep.zeta;
        prep.fl.server_lr = rep.eta;
    }

    const bool corrects = prep.fl.variant == Variant::kFedDDPM ||
                          prep.fl.variant == Variant::kFedDDPMPlus;
    if (corrects) {
        const double lr = cfg.warmup_lr > 0.0 ? cfg.warmup_lr : prep.fl.client_lr;
        const auto warmup_models =
            warmup(prep.clients, prep.fl.warmup_epochs, lr, prep.fl.batch_size,
                   prep.schedule, prep.net, cfg.seed);
        if (cfg.save_warmup && !out_dir.empty()) {
            std::filesystem::create_directories(out_dir + "/warmup");
            for (std::size_t i = 0; i < warmup_models.size(); ++i) {
                save_params(out_dir + "/warmup/client_" + std::to_string(i) + ".bin",
                            warmup_models[i]);
            }
        }
        std::vector<std::pair<ParamVector, const ClientDataset*>> pairs;
        pairs.reserve(warmup_models.size());
        for (std::size_t i = 0; i < warmup_models.size(); ++i) {
            pairs.emplace_back(warmup_models[i], &prep.clients[i]);
        }
        prep.aux = build_auxiliary_dataset(pairs, prep.fl.aux_ratio, prep.schedule,
                                           prep.net, cfg.seed);
    }
    return prep;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::string out = cfg.out_dir;
    std::filesystem::create_directories(out);

    PreparedRun prep = prepare(cfg, out);

    ScoreFn score_fn = [&](const ParamVector& params, std::size_t round) {
        RngStream rng(derive_seed(cfg.seed, {stream::kEval, round}));
        return evaluate_model(params, prep.eval_pool, prep.fl.quicktest.test_size,
                              prep.schedule, prep.net, rng);
    };

    ParamVector warm_start;
    const ParamVector* initial = nullptr;
    if (cfg.warm_start_epochs > 0) {
        RngStream init_rng(derive_seed(cfg.seed, {stream::kInitModel}));
        RngStream start_rng(derive_seed(cfg.seed, {stream::kInitModel, 1}));
        warm_start = server_correct(init_params(prep.net, init_rng), prep.aux,
                                    {WorkUnit::kEpochs, cfg.warm_start_epochs},
                                    cfg.warm_start_lr, prep.fl.batch_size,
                                    prep.schedule, prep.net, start_rng);
        initial = &warm_start;
    }

    const auto t0 = std::chrono::steady_clock::now();
    const RunResult res = run(prep.fl, prep.clients, &prep.aux, prep.schedule,
                              prep.net, score_fn, cfg.seed, initial);
    const auto t1 = std::chrono::steady_clock::now();

    RunArtifacts artifacts;
    artifacts.rounds_executed = res.records.size();
    artifacts.early_exit_round = res.early_exit_round;
    artifacts.final_score = score_fn(res.final_params, prep.fl.rounds);

    // round log: per-round wallclock is only measured in timing mode so that
    // default artifacts stay byte-identical across reruns
    const long long total_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    const long long per_round_ms =
        cfg.timing && !res.records.empty()
            ? total_ms / static_cast<long long>(res.records.size())
            : 0;

    artifacts.round_log_path = out + "/round_log.csv";
    {
        std::ofstream log(artifacts.round_log_path);
        if (!log) throw std::runtime_error("cannot write " + artifacts.round_log_path);
        log << "round,variant,loss,grad_norm_sq,score,wallclock_ms,early_exit\n";
        for (const auto& rec : res.records) {
            log << rec.round << ',' << variant_name(prep.fl.variant) << ','
                << fmt_double(rec.mean_client_loss) << ',';
            if (!prep.probe.empty()) {
                log << fmt_double(stationarity_estimate(rec.post_correction, prep.probe,
                                                        prep.schedule, prep.net));
            }
            log << ',';
            if (rec.score.has_value()) log << fmt_double(*rec.score);
            log << ',' << per_round_ms << ','
                << (res.early_exit_round.has_value() &&
                            *res.early_exit_round == rec.round
                        ? 1
                        : 0)
                << '\n';
        }
    }

    if (cfg.checkpoint_every > 0) {
        std::filesystem::create_directories(out + "/checkpoints");
        for (const auto& rec : res.records) {
            if ((rec.round + 1) % cfg.checkpoint_every == 0) {
                save_params(out + "/checkpoints/round_" + std::to_string(rec.round) +
                                ".bin",
                            rec.post_correction);
            }
        }
    }

    artifacts.final_model_path = out + "/final_model.bin";
    save_params(artifacts.final_model_path, res.final_params);

    artifacts.summary_path = out + "/summary.txt";
    {
        std::ofstream sum(artifacts.summary_path);
        if (!sum) throw std::runtime_error("cannot write " + artifacts.summary_path);
        sum << "variant = " << variant_name(prep.fl.variant) << '\n';
        sum << "partition = " << cfg.partition_label() << '\n';
        sum << "seed = " << cfg.seed << '\n';
        sum << "rounds_executed = " << artifacts.rounds_executed << '\n';
        sum << "early_exit_round = "
            << (artifacts.early_exit_round.has_value()
                    ? std::to_string(*artifacts.early_exit_round)
                    : "none")
            << '\n';
        sum << "final_score = " << fmt_double(artifacts.final_score) << '\n';
    }
    return artifacts;
}

namespace {

// Everything that must agree across compared configs (spec of the task),
// i.e. all fields except variant, partitioning, seed and output paths.
std::string compatibility_fingerprint(const ExperimentConfig& c) {
    std::ostringstream os;
    os << c.dataset_size << '|' << c.dim << '|' << c.diffusion_steps << '|'
       << fmt_double(c.beta_start) << '|' << fmt_double(c.beta_end) << '|'
       << c.fl.n_clients << '|' << fmt_double(c.fl.participation) << '|'
       << c.fl.rounds << '|' << c.fl.batch_size << '|'
       << fmt_double(c.fl.client_lr) << '|' << c.eval_pool;
    for (const auto& comp : c.mixture.components) {
        os << '|' << comp.label << ':' << fmt_double(comp.weight);
        for (double v : comp.gaussian.mean) os << ',' << fmt_double(v);
        for (double v : comp.gaussian.covariance.a) os << ',' << fmt_double(v);
    }
    return os.str();
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<CompareRow> compare(const std::vector<std::string>& config_paths,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& out_dir) {
    if (config_paths.size() < 2) {
        throw ConfigError("compare: need at least 2 configs");
    }
    std::vector<ExperimentConfig> configs;
    configs.reserve(config_paths.size());
    for (const auto& p : config_paths) configs.push_back(parse_experiment_config(p));
    const std::string fp = compatibility_fingerprint(configs.front());
    for (std::size_t i = 1; i < configs.size(); ++i) {
        if (compatibility_fingerprint(configs[i]) != fp) {
            throw ConfigError("compare: config '" + config_paths[i] +
                              "' differs from '" + config_paths.front() +
                              "' in more than variant/partition");
        }
    }

    std::filesystem::create_directories(out_dir);
    std::vector<CompareRow> rows;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        ExperimentConfig cfg = configs[i];
        const std::vector<std::uint64_t> run_seeds =
            seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;
        std::vector<double> scores;
        std::vector<double> rounds;
        std::string early;
        for (std::uint64_t s : run_seeds) {
            cfg.seed = s;
            cfg.out_dir = out_dir + "/" + variant_name(cfg.fl.variant) + "_" +
                          cfg.partition_label() + "_seed" + std::to_string(s);
            const auto art = run_experiment(cfg);
            scores.push_back(art.final_score);
            rounds.push_back(static_cast<double>(art.rounds_executed));
            if (!early.empty()) early += ';';
            early += art.early_exit_round.has_value()
                         ? std::to_string(*art.early_exit_round)
                         : std::string("-");
        }
        CompareRow row;
        row.variant = variant_name(cfg.fl.variant);
        row.partition = cfg.partition_label();
        row.n_seeds = run_seeds.size();
        row.score_mean = mean_of(scores);
        row.score_std = sample_std(scores);
        row.rounds_mean = mean_of(rounds);
        row.rounds_std = sample_std(rounds);
        row.early_exit = early;
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
        if (a.variant != b.variant) return a.variant < b.variant;
        return a.partition < b.partition;
    });

    std::ofstream out(out_dir + "/comparison.csv");
    if (!out) throw std::runtime_error("cannot write comparison.csv");
    out << "variant,partition,n_seeds,score_mean,score_std,rounds_mean,rounds_std,"
           "early_exit_rounds\n";
    for (const auto& r : rows) {
        out << r.variant << ',' << r.partition << ',' << r.n_seeds << ','
            << fmt_double(r.score_mean) << ',' << fmt_double(r.score_std) << ','
            << fmt_double(r.rounds_mean) << ',' << fmt_double(r.rounds_std) << ','
            << r.early_exit << '\n';
    }
    return rows;
}

std::vector<CheckLine> run_gradcheck(std::uint64_t seed, std::size_t trials) {
    std::vector<CheckLine> lines;
    RngStream rng(derive_seed(seed, {0xfdULL}));
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        DenoiserConfig cfg;
        cfg.input_dim = 1 + rng.uniform_index(3);
        cfg.hidden_dims = {1 + rng.uniform_index(8), 1 + rng.uniform_index(8)};
        cfg.time_embed_dim = 1 + rng.uniform_index(8);
        const std::size_t steps = 10;
        ParamVector params = init_params(cfg, rng);
        Sample xt(cfg.input_dim);
        Sample eps(cfg.input_dim);
        for (double& v : xt) v = rng.gaussian();
        for (double& v : eps) v = rng.gaussian();
        const std::size_t t = 1 + rng.uniform_index(steps);

        const auto res = backward(params, cfg, xt, t, steps, eps);
        const double h = 1e-5;
        for (std::size_t i = 0; i < params.size(); ++i) {
            ParamVector plus = params;
            ParamVector minus = params;
            plus[i] += h;
            minus[i] -= h;
            auto loss_of = [&](const ParamVector& w) {
                const Sample y = forward(w, cfg, xt, t, steps);
                double l = 0.0;
                for (std::size_t j = 0; j < y.size(); ++j) {
                    const double r = eps[j] - y[j];
                    l += r * r;
                }
                return l;
            };
            const double num = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
            const double denom = std::max(std::fabs(num), std::fabs(res.grad[i]));
            if (denom > 1e-8) {
                worst = std::max(worst, std::fabs(num - res.grad[i]) / denom);
            }
        }
    }
    CheckLine line;
    line.name = "analytic-vs-central-difference";
    line.passed = worst < 1e-4;
    line.detail = "max relative error " + fmt_double(worst) + " over " +
                  std::to_string(trials) + " random configurations";
    lines.push_back(line);
    return lines;
}

std::vector<CheckLine> run_oracle_suite(std::uint64_t seed) {
    std::vector<CheckLine> lines;
    const auto schedule = build_linear_schedule(100, 1e-3, 0.15);
    const Sample mu = {1.0, -0.5};
    const double sigma = 0.8;
    const auto target = GaussianSpec::isotropic(mu, sigma * sigma);
    const auto denoiser = optimal_denoiser_gaussian(target, schedule);

    {
        // forward marginal of the noising process at mid-schedule
        RngStream rng(derive_seed(seed, {0x0aULL}));
        const std::size_t t = 50;
        const std::size_t n = 10000;
        const double abar = schedule.alpha_bar_at(t);
        std::vector<Sample> draws;
        draws.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            Sample x0 = sample_gaussian(target, rng);
            Sample eps(2);
            for (double& e : eps) e = rng.gaussian();
            draws.push_back(q_sample(schedule, x0, t, eps));
        }
        const auto fit = fit_gaussian(draws);
        const double want_var = abar * sigma * sigma + 1.0 - abar;
        const double se_mean = 3.0 * std::sqrt(want_var / static_cast<double>(n));
        bool ok = true;
        for (std::size_t i = 0; i < 2; ++i) {
            ok = ok && std::fabs(fit.mean[i] - std::sqrt(abar) * mu[i]) < se_mean;
        }
        CheckLine line;
        line.name = "forward-marginal-moments";
        line.passed = ok;
        line.detail = "t=50, 1e4 draws, 3-sigma bound " + fmt_double(se_mean);
        lines.push_back(line);
    }
    {
        // ancestral sampling with the exact denoiser recovers the target
        RngStream rng(derive_seed(seed, {0x0bULL}));
        const auto samples = ancestral_sample(denoiser, schedule, 2, 10000, rng);
        const auto fit = fit_gaussian(samples);
        const double se_mean = 3.0 * sigma / 100.0;
        bool ok = true;
        for (std::size_t i = 0; i < 2; ++i) {
            ok = ok && std::fabs(fit.mean[i] - mu[i]) < se_mean;
        }
        double fro_err = 0.0;
        double fro_ref = 0.0;
        for (std::size_t r = 0; r < 2; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double want = r == c ? sigma * sigma : 0.0;
                fro_err += (fit.covariance.at(r, c) - want) *
                           (fit.covariance.at(r, c) - want);
                fro_ref += want * want;
            }
        }
        const double rel = std::sqrt(fro_err / fro_ref);
        ok = ok && rel < 0.05;
        CheckLine line;
        line.name = "ancestral-sampling-recovery";
        line.passed = ok;
        line.detail = "covariance Frobenius error " + fmt_double(rel);
        lines.push_back(line);
    }
    return lines;
}

}  // namespace feddm
