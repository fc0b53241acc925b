#include "feddm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace feddm {

std::size_t MixtureSpec::dim() const {
    return components.empty() ? 0 : components.front().gaussian.dim();
}

void MixtureSpec::validate() const {
    if (components.empty()) {
        throw std::invalid_argument("MixtureSpec: no components");
    }
    double total = 0.0;
    std::vector<int> labels;
    const std::size_t d = components.front().gaussian.dim();
    for (const auto& c : components) {
        if (c.weight <= 0.0) {
            throw std::invalid_argument("MixtureSpec: weights must be positive");
        }
        if (c.gaussian.dim() != d) {
            throw std::invalid_argument("MixtureSpec: component dimension mismatch");
        }
        total += c.weight;
        labels.push_back(c.label);
    }
    if (std::fabs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("MixtureSpec: weights must sum to 1");
    }
    std::sort(labels.begin(), labels.end());
    if (std::adjacent_find(labels.begin(), labels.end()) != labels.end()) {
        throw std::invalid_argument("MixtureSpec: labels must be distinct");
    }
}

std::vector<LabeledSample> generate_global_dataset(const MixtureSpec& spec,
                                                   std::size_t m, RngStream& rng) {
    spec.validate();
    if (m < 1) throw std::invalid_argument("generate_global_dataset: m must be >= 1");
    std::vector<double> cum;
    cum.reserve(spec.components.size());
    double acc = 0.0;
    for (const auto& c : spec.components) {
        acc += c.weight;
        cum.push_back(acc);
    }
    cum.back() = 1.0;  // guard against rounding

    std::vector<LabeledSample> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double u = rng.uniform01();
        const std::size_t k = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const auto& comp = spec.components[std::min(k, spec.components.size() - 1)];
        out.push_back({sample_gaussian(comp.gaussian, rng), comp.label});
    }
    return out;
}

std::vector<ClientDataset> partition_shard(const std::vector<LabeledSample>& data,
                                           std::size_t n_clients, RngStream& rng) {
    if (n_clients < 1) throw std::invalid_argument("partition_shard: need clients");
    const std::size_t groups = 2 * n_clients;
    if (data.size() < groups) {
        throw std::invalid_argument("partition_shard: fewer samples than 2N");
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&data](std::size_t a, std::size_t b) {
        return data[a].label < data[b].label;
    });

    // contiguous groups, sizes differing by at most one
    const std::size_t base = data.size() / groups;
    const std::size_t rem = data.size() % groups;
    std::vector<std::size_t> group_start(groups + 1, 0);
    for (std::size_t g = 0; g < groups; ++g) {
        group_start[g + 1] = group_start[g] + base + (g < rem ? 1 : 0);
    }

    std::vector<std::size_t> perm(groups);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = groups - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    }

    std::vector<ClientDataset> clients(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) {
        clients[i].client_id = i;
        for (std::size_t j : {2 * i, 2 * i + 1}) {
            const std::size_t g = perm[j];
            for (std::size_t k = group_start[g]; k < group_start[g + 1]; ++k) {
                clients[i].samples.push_back(data[order[k]]);
            }
        }
    }
    return clients;
}

namespace {

// Marsaglia-Tsang; the alpha < 1 case boosts through Gamma(alpha + 1).
double gamma_draw(double alpha, RngStream& rng) {
    if (alpha < 1.0) {
        const double u = 1.0 - rng.uniform01();  // (0, 1]
        return gamma_draw(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = rng.gaussian();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = 1.0 - rng.uniform01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

// Integer allocation of `count` by proportions, largest remainder first,
// ties broken by lower index.
std::vector<std::size_t> largest_remainder(const std::vector<double>& props,
                                           std::size_t count) {
    const std::size_t n = props.size();
    std::vector<std::size_t> alloc(n);
    std::vector<std::pair<double, std::size_t>> rema(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double quota = props[i] * static_cast<double>(count);
        alloc[i] = static_cast<std::size_t>(std::floor(quota));
        rema[i] = {quota - std::floor(quota), i};
        assigned += alloc[i];
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < count; ++k, ++assigned) {
        alloc[rema[k % n].second] += 1;
    }
    return alloc;
}

}  // namespace

std::vector<ClientDataset> partition_dirichlet(const std::vector<LabeledSample>& data,
                                               std::size_t n_clients, double alpha,
                                               RngStream& rng) {
    if (n_clients < 1) throw std::invalid_argument("partition_dirichlet: need clients");
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("partition_dirichlet: alpha must be > 0");
    }

    // indices per class, in input order
    std::vector<int> labels;
    for (const auto& s : data) labels.push_back(s.label);
    std::vector<int> classes = labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    std::vector<ClientDataset> clients(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) clients[i].client_id = i;

    for (int cls : classes) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data[i].label == cls) idx.push_back(i);
        }
        std::vector<double> props(n_clients);
        double total = 0.0;
        for (double& p : props) {
            p = gamma_draw(alpha, rng);
            total += p;
        }
        for (double& p : props) p /= total;

        const auto alloc = largest_remainder(props, idx.size());
        std::size_t next = 0;
        for (std::size_t i = 0; i < n_clients; ++i) {
            for (std::size_t k = 0; k < alloc[i]; ++k) {
                clients[i].samples.push_back(data[idx[next++]]);
            }
        }
    }
    return clients;
}

AuxiliaryDataset build_auxiliary_dataset_with(
    const std::vector<const ClientDataset*>& clients,
    const std::function<DenoiserFn(std::size_t)>& denoiser_of, double rho,
    const NoiseSchedule& schedule, std::size_t dim, std::uint64_t base_seed) {
    if (!(rho > 0.0) || rho > 1.0) {
        throw std::invalid_argument("build_auxiliary_dataset: rho must be in (0, 1]");
    }
    AuxiliaryDataset aux;
    aux.per_client_counts.reserve(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const ClientDataset* client = clients[i];
        const auto count = static_cast<std::size_t>(
            std::llround(rho * static_cast<double>(client->size())));
        aux.per_client_counts.push_back(count);
        if (count == 0) {
            if (client->size() > 0) {
                std::cerr << "auxiliary dataset: client " << client->client_id
                          << " contributes 0 samples (m_i = " << client->size()
                          << ", rho = " << rho << ")\n";
            }
            continue;
        }
        RngStream rng(derive_seed(base_seed, {stream::kAuxiliary, client->client_id}));
        auto samples = ancestral_sample(denoiser_of(i), schedule, dim, count, rng);
        for (auto& s : samples) aux.samples.push_back(std::move(s));
    }
    return aux;
}

AuxiliaryDataset build_auxiliary_dataset(
    const std::vector<std::pair<ParamVector, const ClientDataset*>>& warmup_models,
    double rho, const NoiseSchedule& schedule, const DenoiserConfig& config,
    std::uint64_t base_seed) {
    std::vector<const ClientDataset*> clients;
    clients.reserve(warmup_models.size());
    for (const auto& [params, client] : warmup_models) clients.push_back(client);
    return build_auxiliary_dataset_with(
        clients,
        [&warmup_models, &config, &schedule](std::size_t i) {
            return make_denoiser(warmup_models[i].first, config, schedule.steps);
        },
        rho, schedule, config.input_dim, base_seed);
}

void dump_labeled_samples(const std::string& path,
                          const std::vector<LabeledSample>& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_labeled_samples: cannot open " + path);
    char buf[64];
    for (const auto& s : data) {
        out << s.label;
        for (double v : s.point) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ", " << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("dump_labeled_samples: write failed " + path);
}

std::vector<LabeledSample> load_labeled_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_labeled_samples: cannot open " + path);
    std::vector<LabeledSample> data;
    std::string line;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        LabeledSample s;
        if (!std::getline(ss, field, ',')) {
            throw std::runtime_error("load_labeled_samples: bad line: " + line);
        }
        s.label = std::stoi(field);
        while (std::getline(ss, field, ',')) {
            s.point.push_back(std::stod(field));
        }
        if (dim == 0) dim = s.point.size();
        if (s.point.empty() || s.point.size() != dim) {
            throw std::runtime_error("load_labeled_samples: inconsistent dimension");
        }
        data.push_back(std::move(s));
    }
    return data;
}

}  // namespace feddm
