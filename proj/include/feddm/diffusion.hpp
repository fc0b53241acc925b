#pragma once

#include <functional>
#include <vector>

#include "feddm/linalg.hpp"
#include "feddm/rng.hpp"
#include "feddm/schedule.hpp"

namespace feddm {

// A data point. Dimension is fixed per run; operations check it.
using Sample = std::vector<double>;

// Noise predictor handle: maps (x_t, t) to a predicted noise vector.
using DenoiserFn = std::function<Sample(const Sample&, std::size_t)>;

// Gaussian N(mean, covariance); covariance symmetric PSD.
struct GaussianSpec {
    Sample mean;
    Matrix covariance;

    std::size_t dim() const { return mean.size(); }

    static GaussianSpec isotropic(Sample mean, double variance);

    // True when covariance is variance * I; writes the variance if asked.
    bool isotropic_variance(double* variance_out) const;
};

Sample sample_gaussian(const GaussianSpec& spec, RngStream& rng);

// Forward noising: x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Sample q_sample(const NoiseSchedule& schedule, const Sample& x0, std::size_t t,
                const Sample& eps);

// Per-sample noise-prediction loss || eps - denoiser(x_t, t) ||^2.
// The expectation over t, x0 and eps is the caller's job.
double ddpm_loss(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                 const Sample& x0, std::size_t t, const Sample& eps);

// Ancestral sampling from x_T ~ N(0, I):
//   x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//             + sqrt(beta_t) * z,   z ~ N(0, I) for t > 1, z = 0 at t = 1.
std::vector<Sample> ancestral_sample(const DenoiserFn& denoiser,
                                     const NoiseSchedule& schedule,
                                     std::size_t dim, std::size_t n,
                                     RngStream& rng);

// Exact conditional-expectation noise predictor for data ~ N(mu, sigma^2 I):
//   eps_hat(x_t, t) = sqrt(1 - abar_t) (x_t - sqrt(abar_t) mu)
//                     / (abar_t sigma^2 + 1 - abar_t).
// Rejects non-isotropic targets.
DenoiserFn optimal_denoiser_gaussian(const GaussianSpec& target,
                                     const NoiseSchedule& schedule);

}  // namespace feddm
