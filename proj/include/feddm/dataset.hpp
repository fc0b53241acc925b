#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feddm/denoiser.hpp"
#include "feddm/diffusion.hpp"

namespace feddm {

// Gaussian mixture standing in for a labeled dataset: one component per class.
struct MixtureSpec {
    struct Component {
        double weight = 0.0;
        GaussianSpec gaussian;
        int label = 0;
    };
    std::vector<Component> components;

    std::size_t dim() const;
    void validate() const;  // weights positive summing to 1, labels distinct
};

struct LabeledSample {
    Sample point;
    int label = 0;
};

struct ClientDataset {
    std::size_t client_id = 0;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
};

// Server-side synthetic dataset; per_client_counts[i] = |A_i|.
struct AuxiliaryDataset {
    std::vector<Sample> samples;
    std::vector<std::size_t> per_client_counts;
};

std::vector<LabeledSample> generate_global_dataset(const MixtureSpec& spec,
                                                   std::size_t m, RngStream& rng);

// Label-sorted data cut into 2N contiguous near-equal groups; each client
// receives two groups by a random permutation. Disjoint and complete.
std::vector<ClientDataset> partition_shard(const std::vector<LabeledSample>& data,
                                           std::size_t n_clients, RngStream& rng);

// Per class, client proportions ~ Dirichlet(alpha, ..., alpha); class samples
// allocated by largest-remainder rounding. Disjoint and complete.
std::vector<ClientDataset> partition_dirichlet(const std::vector<LabeledSample>& data,
                                               std::size_t n_clients, double alpha,
                                               RngStream& rng);

// Samples |A_i| = round(rho * m_i) points from each warmed-up client model and
// concatenates in client-id order. Seeds per client derive from base_seed so
// the result does not depend on scheduling.
AuxiliaryDataset build_auxiliary_dataset(
    const std::vector<std::pair<ParamVector, const ClientDataset*>>& warmup_models,
    double rho, const NoiseSchedule& schedule, const DenoiserConfig& config,
    std::uint64_t base_seed);

// Same construction with arbitrary per-client denoisers (index-aligned with
// `clients`); the parameter-vector form above delegates here.
AuxiliaryDataset build_auxiliary_dataset_with(
    const std::vector<const ClientDataset*>& clients,
    const std::function<DenoiserFn(std::size_t)>& denoiser_of, double rho,
    const NoiseSchedule& schedule, std::size_t dim, std::uint64_t base_seed);

// One sample per line: "label, v_1, ..., v_d" with full-precision floats.
void dump_labeled_samples(const std::string& path,
                          const std::vector<LabeledSample>& data);
std::vector<LabeledSample> load_labeled_samples(const std::string& path);

}  // namespace feddm
