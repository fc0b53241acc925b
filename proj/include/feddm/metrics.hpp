#pragma once

#include <optional>
#include <vector>

#include "feddm/denoiser.hpp"
#include "feddm/diffusion.hpp"
#include "feddm/linalg.hpp"

namespace feddm {

// Sample mean and unbiased sample covariance of a point cloud.
struct GaussianFit {
    Sample mean;
    Matrix covariance;
    std::size_t n_samples = 0;
};

GaussianFit fit_gaussian(const std::vector<Sample>& samples);

// Closed-form Frechet distance between Gaussian fits:
//   ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)),
// with tr((S_a S_b)^(1/2)) computed as tr((sqrt(S_a) S_b sqrt(S_a))^(1/2)).
// Tiny negative eigenvalues (above -1e-10) are clamped to zero.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Generates test_size points from the model and returns the Frechet distance
// between Gaussian fits of generated and real pools. Lower is better.
double evaluate_model(const ParamVector& model, const std::vector<Sample>& real_pool,
                      std::size_t test_size, const NoiseSchedule& schedule,
                      const DenoiserConfig& config, RngStream& rng);

// Running average state of the plateau detector.
struct EmaState {
    std::optional<double> avg_score;
    double gamma = 0.4;
    double threshold = 0.2;
    std::size_t test_size = 500;

    void validate() const;
};

struct QuickTestResult {
    bool trigger = false;
    EmaState state;
};

// Plateau test transition: triggers when the running average exists and
// |avg - score| <= threshold (state unchanged); otherwise updates the
// average (first score initializes it, later ones blend with weight gamma).
QuickTestResult quick_test(const EmaState& state, double score);

// One frozen training example: the loss on it is deterministic.
struct ProbeItem {
    Sample x0;
    std::size_t t = 1;
    Sample eps;
};

// Squared norm of the mean gradient over all probe items; the per-round
// term of the average-gradient-norm convergence criterion.
double stationarity_estimate(const ParamVector& model,
                             const std::vector<std::vector<ProbeItem>>& probe,
                             const NoiseSchedule& schedule,
                             const DenoiserConfig& config);

}  // namespace feddm
