#pragma once

#include <cstddef>
#include <vector>

namespace feddm {

// Precomputed diffusion coefficients: beta_t, alpha_t = 1 - beta_t and the
// running product alpha_bar_t. Timesteps are 1-based, t in [1, steps].
struct NoiseSchedule {
    std::size_t steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double beta_at(std::size_t t) const { return beta[t - 1]; }
    double alpha_at(std::size_t t) const { return alpha[t - 1]; }
    double alpha_bar_at(std::size_t t) const { return alpha_bar[t - 1]; }
};

// Betas linearly spaced from beta_start to beta_end inclusive.
// Requires steps >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule build_linear_schedule(std::size_t steps, double beta_start,
                                    double beta_end);

}  // namespace feddm
