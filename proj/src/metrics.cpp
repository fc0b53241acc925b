#include "feddm/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace feddm {

GaussianFit fit_gaussian(const std::vector<Sample>& samples) {
    if (samples.size() < 2) {
        throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    }
    const std::size_t n = samples.size();
    const std::size_t d = samples.front().size();
    GaussianFit fit;
    fit.n_samples = n;
    fit.mean.assign(d, 0.0);
    for (const auto& s : samples) {
        if (s.size() != d) {
            throw std::invalid_argument("fit_gaussian: inconsistent dimensions");
        }
        for (std::size_t i = 0; i < d; ++i) fit.mean[i] += s[i];
    }
    for (double& v : fit.mean) v /= static_cast<double>(n);

    fit.covariance = Matrix(d);
    for (const auto& s : samples) {
        for (std::size_t r = 0; r < d; ++r) {
            const double dr = s[r] - fit.mean[r];
            for (std::size_t c = r; c < d; ++c) {
                fit.covariance.at(r, c) += dr * (s[c] - fit.mean[c]);
            }
        }
    }
    const double denom = static_cast<double>(n - 1);  // unbiased
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = r; c < d; ++c) {
            fit.covariance.at(r, c) /= denom;
            fit.covariance.at(c, r) = fit.covariance.at(r, c);
        }
    }
    return fit;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    const std::size_t d = a.mean.size();
    if (b.mean.size() != d || a.covariance.dim != d || b.covariance.dim != d) {
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    }

    double mean_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }

    // PSD checks throw beyond the -1e-10 eigenvalue tolerance
    const Matrix root_a = psd_sqrt(a.covariance, 1e-10);
    for (double lam : jacobi_eigen(b.covariance).values) {
        if (lam < -1e-10) {
            throw std::invalid_argument("frechet_distance: covariance not PSD");
        }
    }
    Matrix m = root_a * b.covariance * root_a;
    // symmetrize away floating-point asymmetry before eigensolving
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = r + 1; c < d; ++c) {
            const double v = 0.5 * (m.at(r, c) + m.at(c, r));
            m.at(r, c) = v;
            m.at(c, r) = v;
        }
    }
    const SymEigen eig = jacobi_eigen(m);
    double tr_cross = 0.0;
    for (double lam : eig.values) {
        tr_cross += std::sqrt(lam > 0.0 ? lam : 0.0);
    }

    const double fd =
        mean_term + trace(a.covariance) + trace(b.covariance) - 2.0 * tr_cross;
    return fd > 0.0 ? fd : 0.0;
}

double evaluate_model(const ParamVector& model, const std::vector<Sample>& real_pool,
                      std::size_t test_size, const NoiseSchedule& schedule,
                      const DenoiserConfig& config, RngStream& rng) {
    if (test_size < 2) throw std::invalid_argument("evaluate_model: test_size < 2");
    if (real_pool.size() < 2) {
        throw std::invalid_argument("evaluate_model: real pool too small");
    }
    auto denoiser = make_denoiser(model, config, schedule.steps);
    const auto generated =
        ancestral_sample(denoiser, schedule, config.input_dim, test_size, rng);
    return frechet_distance(fit_gaussian(generated), fit_gaussian(real_pool));
}

void EmaState::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw std::invalid_argument("EmaState: gamma must be in (0, 1)");
    }
    if (!(threshold > 0.0)) {
        throw std::invalid_argument("EmaState: threshold must be > 0");
    }
    if (test_size < 1) {
        throw std::invalid_argument("EmaState: test_size must be >= 1");
    }
}

QuickTestResult quick_test(const EmaState& state, double score) {
    state.validate();
    if (!std::isfinite(score)) {
        throw std::invalid_argument("quick_test: score must be finite");
    }
    QuickTestResult res;
    res.state = state;
    if (state.avg_score.has_value() &&
        std::fabs(*state.avg_score - score) <= state.threshold) {
        res.trigger = true;
        return res;  // state unchanged on trigger
    }
    if (!state.avg_score.has_value()) {
        res.state.avg_score = score;
    } else {
        res.state.avg_score = score * state.gamma + *state.avg_score * (1.0 - state.gamma);
    }
    return res;
}

double stationarity_estimate(const ParamVector& model,
                             const std::vector<std::vector<ProbeItem>>& probe,
                             const NoiseSchedule& schedule,
                             const DenoiserConfig& config) {
    std::size_t count = 0;
    GradientVector grad(model.size(), 0.0);
    for (const auto& batch : probe) {
        for (const auto& item : batch) {
            const Sample xt = q_sample(schedule, item.x0, item.t, item.eps);
            backward_into(model, config, xt, item.t, schedule.steps, item.eps, grad);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("stationarity_estimate: empty probe");
    double norm_sq = 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    for (double g : grad) {
        const double m = g * inv;
        norm_sq += m * m;
    }
    return norm_sq;
}

}  // namespace feddm
