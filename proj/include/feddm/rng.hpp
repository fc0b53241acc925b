#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace feddm {

// One splitmix64 step; used for seed derivation and stream labeling.
inline std::uint64_t splitmix64_step(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives a child seed from a master seed and a label path, e.g.
// {kClient, round, client_id}. Different paths give statistically
// independent streams, and a stream never depends on how many draws
// other streams made.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
    std::uint64_t state = master;
    splitmix64_step(state);
    for (std::uint64_t label : path) {
        state ^= 0x2545f4914f6cdd1dULL * (label + 0x632be59bd9b4e019ULL);
        splitmix64_step(state);
    }
    return splitmix64_step(state);
}

// Seeded random stream with explicitly implemented distributions.
// std::normal_distribution and friends are implementation-defined, so all
// draws here go through our own transforms to keep runs bit-reproducible.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; second value of each pair is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite
        double u1 = 1.0 - uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
    std::size_t uniform_index(std::size_t n) {
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % span);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stream labels for every source of randomness in a run. Each consumer
// derives its own stream so that adding draws in one place never shifts
// the randomness seen anywhere else.
namespace stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kInitModel = 3;
inline constexpr std::uint64_t kWarmup = 4;
inline constexpr std::uint64_t kAuxiliary = 5;
inline constexpr std::uint64_t kSelect = 6;
inline constexpr std::uint64_t kClient = 7;
inline constexpr std::uint64_t kServer = 8;
inline constexpr std::uint64_t kEval = 9;
inline constexpr std::uint64_t kProbe = 10;
}  // namespace stream

}  // namespace feddm
