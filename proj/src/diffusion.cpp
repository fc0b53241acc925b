#include "feddm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace feddm {

GaussianSpec GaussianSpec::isotropic(Sample mean, double variance) {
    GaussianSpec g;
    g.covariance = Matrix::scaled_identity(mean.size(), variance);
    g.mean = std::move(mean);
    return g;
}

bool GaussianSpec::isotropic_variance(double* variance_out) const {
    if (covariance.dim != mean.size() || covariance.dim == 0) return false;
    const double v = covariance.at(0, 0);
    for (std::size_t r = 0; r < covariance.dim; ++r) {
        for (std::size_t c = 0; c < covariance.dim; ++c) {
            const double want = r == c ? v : 0.0;
            if (std::fabs(covariance.at(r, c) - want) > 1e-12 * (1.0 + std::fabs(v))) {
                return false;
            }
        }
    }
    if (variance_out) *variance_out = v;
    return true;
}

Sample sample_gaussian(const GaussianSpec& spec, RngStream& rng) {
    double iso = 0.0;
    const std::size_t d = spec.dim();
    Sample out(d);
    if (spec.isotropic_variance(&iso)) {
        const double sd = std::sqrt(iso);
        for (std::size_t i = 0; i < d; ++i) out[i] = spec.mean[i] + sd * rng.gaussian();
        return out;
    }
    const Matrix f = psd_factor(spec.covariance);
    Sample z(d);
    for (std::size_t i = 0; i < d; ++i) z[i] = rng.gaussian();
    for (std::size_t r = 0; r < d; ++r) {
        double s = spec.mean[r];
        for (std::size_t c = 0; c < d; ++c) s += f.at(r, c) * z[c];
        out[r] = s;
    }
    return out;
}

namespace {

void check_timestep(const NoiseSchedule& schedule, std::size_t t) {
    if (t < 1 || t > schedule.steps) {
        throw std::invalid_argument("timestep out of range [1, steps]");
    }
}

}  // namespace

Sample q_sample(const NoiseSchedule& schedule, const Sample& x0, std::size_t t,
                const Sample& eps) {
    check_timestep(schedule, t);
    if (x0.size() != eps.size()) {
        throw std::invalid_argument("q_sample: x0 and eps dimension mismatch");
    }
    const double abar = schedule.alpha_bar_at(t);
    const double signal = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    Sample out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        out[i] = signal * x0[i] + noise * eps[i];
    }
    return out;
}

double ddpm_loss(const DenoiserFn& denoiser, const NoiseSchedule& schedule,
                 const Sample& x0, std::size_t t, const Sample& eps) {
    const Sample xt = q_sample(schedule, x0, t, eps);
    const Sample pred = denoiser(xt, t);
    if (pred.size() != eps.size()) {
        throw std::invalid_argument("ddpm_loss: denoiser output dimension mismatch");
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double r = eps[i] - pred[i];
        loss += r * r;
    }
    return loss;
}

std::vector<Sample> ancestral_sample(const DenoiserFn& denoiser,
                                     const NoiseSchedule& schedule,
                                     std::size_t dim, std::size_t n,
                                     RngStream& rng) {
    if (n < 1) throw std::invalid_argument("ancestral_sample: n must be >= 1");
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Sample x(dim);
        for (std::size_t i = 0; i < dim; ++i) x[i] = rng.gaussian();
        for (std::size_t t = schedule.steps; t >= 1; --t) {
            const double beta = schedule.beta_at(t);
            const double alpha = schedule.alpha_at(t);
            const double abar = schedule.alpha_bar_at(t);
            const Sample pred = denoiser(x, t);
            const double coeff = beta / std::sqrt(1.0 - abar);
            const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
            const double sigma = std::sqrt(beta);
            for (std::size_t i = 0; i < dim; ++i) {
                double mean = inv_sqrt_alpha * (x[i] - coeff * pred[i]);
                x[i] = t > 1 ? mean + sigma * rng.gaussian() : mean;
            }
        }
        out.push_back(std::move(x));
    }
    return out;
}

DenoiserFn optimal_denoiser_gaussian(const GaussianSpec& target,
                                     const NoiseSchedule& schedule) {
    double variance = 0.0;
    if (!target.isotropic_variance(&variance)) {
        throw std::invalid_argument(
            "optimal_denoiser_gaussian: target covariance must be isotropic");
    }
    const Sample mu = target.mean;
    const std::vector<double> alpha_bar = schedule.alpha_bar;
    const std::size_t steps = schedule.steps;
    return [mu, variance, alpha_bar, steps](const Sample& xt, std::size_t t) {
        if (t < 1 || t > steps) {
            throw std::invalid_argument("optimal denoiser: timestep out of range");
        }
        if (xt.size() != mu.size()) {
            throw std::invalid_argument("optimal denoiser: dimension mismatch");
        }
        const double abar = alpha_bar[t - 1];
        const double scale = std::sqrt(1.0 - abar) / (abar * variance + 1.0 - abar);
        Sample out(xt.size());
        for (std::size_t i = 0; i < xt.size(); ++i) {
            out[i] = scale * (xt[i] - std::sqrt(abar) * mu[i]);
        }
        return out;
    };
}

}  // namespace feddm
