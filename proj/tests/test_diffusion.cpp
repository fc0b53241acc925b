#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "feddm/diffusion.hpp"
#include "feddm/metrics.hpp"

using namespace feddm;

TEST_CASE("linear schedule endpoints and products") {
    const auto one = build_linear_schedule(1, 0.1, 0.1);
    CHECK(one.beta == std::vector<double>{0.1});
    CHECK(one.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));

    const auto two = build_linear_schedule(2, 0.1, 0.2);
    CHECK(two.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(two.alpha_bar_at(2) == doctest::Approx(0.72).epsilon(1e-15));

    // regression constant: product of (1 - beta_t) over the standard
    // 1000-step schedule, computed independently at high precision
    const auto big = build_linear_schedule(1000, 1e-4, 0.02);
    CHECK(big.alpha_bar_at(1000) ==
          doctest::Approx(4.0358297653756835e-05).epsilon(1e-10));
    CHECK(big.alpha_bar_at(1000) < 1e-3);
    CHECK(big.beta.front() == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(big.beta.back() == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("schedule invariants hold for random parameters") {
    RngStream rng(3);
    for (int rep = 0; rep < 25; ++rep) {
        const std::size_t steps = 1 + rng.uniform_index(200);
        const double lo = 1e-5 + 0.4 * rng.uniform01();
        const double hi = lo + (0.98 - lo) * rng.uniform01();
        const auto s = build_linear_schedule(steps, lo, hi);
        REQUIRE(s.beta.size() == steps);
        CHECK(s.alpha_bar_at(1) == s.alpha_at(1));
        for (std::size_t t = 1; t <= steps; ++t) {
            CHECK(s.beta_at(t) > 0.0);
            CHECK(s.beta_at(t) < 1.0);
            CHECK(s.alpha_at(t) > 0.0);
            CHECK(s.alpha_at(t) < 1.0);
            if (t > 1) {
                CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
                CHECK(s.alpha_bar_at(t) ==
                      doctest::Approx(s.alpha_bar_at(t - 1) * s.alpha_at(t))
                          .epsilon(1e-15));
            }
        }
    }
}

TEST_CASE("schedule rejects invalid inputs") {
    CHECK_THROWS_AS(build_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_linear_schedule(10, -0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("q_sample special cases") {
    const auto s = build_linear_schedule(2, 0.1, 0.2);  // alpha_bar_2 = 0.72

    const Sample x0 = {1.0, 0.0};
    const Sample zero = {0.0, 0.0};
    const Sample eps = {0.0, 1.0};

    const auto noise_free = q_sample(s, x0, 2, zero);
    CHECK(noise_free[0] == doctest::Approx(std::sqrt(0.72)).epsilon(1e-15));
    CHECK(noise_free[1] == 0.0);

    const auto signal_free = q_sample(s, zero, 2, eps);
    CHECK(signal_free[0] == 0.0);
    CHECK(signal_free[1] == doctest::Approx(std::sqrt(0.28)).epsilon(1e-15));

    const auto both = q_sample(s, x0, 2, eps);
    CHECK(both[0] == doctest::Approx(std::sqrt(0.72)).epsilon(1e-15));
    CHECK(both[1] == doctest::Approx(std::sqrt(0.28)).epsilon(1e-15));

    CHECK_THROWS_AS(q_sample(s, x0, 0, eps), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(s, x0, 3, eps), std::invalid_argument);
    CHECK_THROWS_AS(q_sample(s, x0, 1, Sample{1.0}), std::invalid_argument);
}

TEST_CASE("forward marginal matches the closed form at 1e4 draws") {
    const auto s = build_linear_schedule(100, 1e-3, 0.15);
    const Sample mu = {0.7, -1.2};
    const double sigma = 0.9;
    const auto target = GaussianSpec::isotropic(mu, sigma * sigma);

    for (std::size_t t : {std::size_t{1}, std::size_t{50}, std::size_t{100}}) {
        RngStream rng(derive_seed(101, {t}));
        const std::size_t n = 10000;
        std::vector<Sample> draws;
        draws.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Sample x0 = sample_gaussian(target, rng);
            Sample eps(2);
            for (double& e : eps) e = rng.gaussian();
            draws.push_back(q_sample(s, x0, t, eps));
        }
        const auto fit = fit_gaussian(draws);
        const double abar = s.alpha_bar_at(t);
        const double want_var = abar * sigma * sigma + 1.0 - abar;
        const double se_mean = std::sqrt(want_var / n);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(std::fabs(fit.mean[i] - std::sqrt(abar) * mu[i]) < 3.0 * se_mean);
        }
        for (std::size_t r = 0; r < 2; ++r) {
            for (std::size_t c = 0; c < 2; ++c) {
                const double want = r == c ? want_var : 0.0;
                // var of a sample covariance entry: (v_rr v_cc + v_rc^2) / n
                const double se = std::sqrt(
                    (want_var * want_var + want * want) / static_cast<double>(n));
                CHECK(std::fabs(fit.covariance.at(r, c) - want) < 3.0 * se);
            }
        }
    }
}

TEST_CASE("ddpm_loss edge cases and nonnegativity") {
    const auto s = build_linear_schedule(10, 0.01, 0.2);
    const Sample x0 = {0.4, -0.3};
    const Sample eps = {1.1, -2.0};

    const DenoiserFn exact = [&eps](const Sample&, std::size_t) { return eps; };
    CHECK(ddpm_loss(exact, s, x0, 4, eps) == 0.0);

    const DenoiserFn zero = [](const Sample& x, std::size_t) {
        return Sample(x.size(), 0.0);
    };
    CHECK(ddpm_loss(zero, s, x0, 4, eps) ==
          doctest::Approx(1.1 * 1.1 + 4.0).epsilon(1e-15));

    RngStream rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        const double a = rng.gaussian();
        const double b = rng.gaussian();
        const DenoiserFn lin = [a, b](const Sample& x, std::size_t) {
            Sample out(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b;
            return out;
        };
        Sample x = {rng.gaussian(), rng.gaussian()};
        Sample e = {rng.gaussian(), rng.gaussian()};
        CHECK(ddpm_loss(lin, s, x, 1 + rng.uniform_index(10), e) >= 0.0);
    }
}

TEST_CASE("expected loss of the exact denoiser matches the residual variance") {
    // E ||eps - E[eps | x_t]||^2 = d * abar sigma^2 / (abar sigma^2 + 1 - abar),
    // estimated with a 1e5-draw Monte Carlo run
    const auto s = build_linear_schedule(2, 0.1, 0.2);
    const std::size_t t = 2;  // alpha_bar = 0.72
    const Sample mu = {2.0, 0.0};
    const double sigma = 0.5;
    const auto target = GaussianSpec::isotropic(mu, sigma * sigma);
    const auto denoiser = optimal_denoiser_gaussian(target, s);

    RngStream rng(29);
    const std::size_t n = 100000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Sample x0 = sample_gaussian(target, rng);
        Sample eps(2);
        for (double& e : eps) e = rng.gaussian();
        const double l = ddpm_loss(denoiser, s, x0, t, eps);
        sum += l;
        sq += l * l;
    }
    const double mc_mean = sum / n;
    const double mc_se = std::sqrt((sq / n - mc_mean * mc_mean) / n);
    const double abar = 0.72;
    const double analytic = 2.0 * abar * sigma * sigma /
                            (abar * sigma * sigma + 1.0 - abar);
    CHECK(std::fabs(mc_mean - analytic) < 5.0 * mc_se);
}

TEST_CASE("optimal gaussian denoiser formula") {
    const auto s = build_linear_schedule(2, 0.1, 0.2);  // alpha_bar_2 = 0.72

    // mu = 0, sigma = 1: denominator is 1, eps_hat = sqrt(1 - abar) x
    const auto unit = optimal_denoiser_gaussian(
        GaussianSpec::isotropic({0.0, 0.0}, 1.0), s);
    const Sample x = {1.3, -0.4};
    const auto e1 = unit(x, 2);
    CHECK(e1[0] == doctest::Approx(std::sqrt(0.28) * 1.3).epsilon(1e-14));
    CHECK(e1[1] == doctest::Approx(std::sqrt(0.28) * -0.4).epsilon(1e-14));

    // pinned worked example: mu = (2, 0), sigma = 0.5, abar = 0.72, x = (2, 1)
    const auto den = optimal_denoiser_gaussian(
        GaussianSpec::isotropic({2.0, 0.0}, 0.25), s);
    const auto e2 = den({2.0, 1.0}, 2);
    CHECK(e2[0] == doctest::Approx(0.348484242608892).epsilon(1e-12));
    CHECK(e2[1] == doctest::Approx(1.1503266569846047).epsilon(1e-12));

    // abar -> 1 limit at x = mu: prediction goes to zero
    const auto tight = build_linear_schedule(1, 1e-4, 1e-4);
    const auto near_id = optimal_denoiser_gaussian(
        GaussianSpec::isotropic({2.0, 0.0}, 0.25), tight);
    const auto e3 = near_id({2.0, 0.0}, 1);
    CHECK(std::fabs(e3[0]) < 1e-5);
    CHECK(std::fabs(e3[1]) < 1e-5);

    Matrix aniso(2);
    aniso.at(0, 0) = 1.0;
    aniso.at(1, 1) = 2.0;
    GaussianSpec bad;
    bad.mean = {0.0, 0.0};
    bad.covariance = aniso;
    CHECK_THROWS_AS(optimal_denoiser_gaussian(bad, s), std::invalid_argument);
}

TEST_CASE("denoiser formula agrees with the Monte-Carlo posterior mean") {
    // weighted posterior: draw x0 from the prior, weight by the likelihood of
    // observing x_t = v, average the implied noise vectors
    const double abar = 0.72;
    const Sample mu = {2.0, 0.0};
    const double sigma = 0.5;
    const Sample v = {2.0, 1.0};

    RngStream rng(31);
    const std::size_t n = 1000000;
    double wsum = 0.0;
    Sample post(2, 0.0);
    const double sq_ab = std::sqrt(abar);
    const double one_m = 1.0 - abar;
    for (std::size_t i = 0; i < n; ++i) {
        Sample x0 = {mu[0] + sigma * rng.gaussian(), mu[1] + sigma * rng.gaussian()};
        double dist = 0.0;
        for (std::size_t j = 0; j < 2; ++j) {
            const double r = v[j] - sq_ab * x0[j];
            dist += r * r;
        }
        const double w = std::exp(-dist / (2.0 * one_m));
        wsum += w;
        for (std::size_t j = 0; j < 2; ++j) {
            post[j] += w * (v[j] - sq_ab * x0[j]) / std::sqrt(one_m);
        }
    }
    for (double& p : post) p /= wsum;

    const auto s = build_linear_schedule(2, 0.1, 0.2);
    const auto den = optimal_denoiser_gaussian(
        GaussianSpec::isotropic(mu, sigma * sigma), s);
    const auto pred = den(v, 2);
    CHECK(std::fabs(post[0] - pred[0]) < 5e-3);
    CHECK(std::fabs(post[1] - pred[1]) < 5e-3);
}

namespace {

// Exact output moments of the reverse chain driven by the analytic denoiser:
// each step is the affine map x' = a x + b plus beta-variance noise, so the
// output mean/variance follow by recursion. Independent of the sampler code.
struct ChainMoments {
    double gain = 0.0;    // mean multiplier on mu
    double variance = 0.0;
};

ChainMoments reverse_chain_moments(const NoiseSchedule& s, double sigma2) {
    double mean_coeff = 0.0;  // coefficient of mu in the running mean
    double var = 1.0;         // starts from N(0, I)
    for (std::size_t t = s.steps; t >= 1; --t) {
        const double beta = s.beta_at(t);
        const double alpha = s.alpha_at(t);
        const double abar = s.alpha_bar_at(t);
        const double c = beta / (abar * sigma2 + 1.0 - abar);
        const double a = (1.0 - c) / std::sqrt(alpha);
        const double b = c * std::sqrt(abar) / std::sqrt(alpha);  // times mu
        mean_coeff = a * mean_coeff + b;
        var = a * a * var + (t > 1 ? beta : 0.0);
    }
    return {mean_coeff, var};
}

}  // namespace

TEST_CASE("ancestral sampler matches the exact chain moments and the target") {
    const auto s = build_linear_schedule(100, 1e-3, 0.15);
    const Sample mu = {1.0, -0.5};
    const double sigma = 0.8;
    const auto target = GaussianSpec::isotropic(mu, sigma * sigma);
    const auto denoiser = optimal_denoiser_gaussian(target, s);

    RngStream rng(22);
    const std::size_t n = 10000;
    const auto samples = ancestral_sample(denoiser, s, 2, n, rng);
    REQUIRE(samples.size() == n);
    const auto fit = fit_gaussian(samples);

    const auto chain = reverse_chain_moments(s, sigma * sigma);
    // the chain itself must land on the target: small init/discretization bias
    CHECK(std::fabs(chain.gain - 1.0) < 0.01);
    CHECK(std::fabs(chain.variance - sigma * sigma) / (sigma * sigma) < 0.05);

    // empirical moments vs the exact chain moments (pure MC error)
    const double se_mean = std::sqrt(chain.variance / n);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::fabs(fit.mean[i] - chain.gain * mu[i]) < 3.5 * se_mean);
    }
    const double se_var = chain.variance * std::sqrt(2.0 / n);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
            const double want = r == c ? chain.variance : 0.0;
            const double se = r == c ? se_var : chain.variance / std::sqrt(1.0 * n);
            CHECK(std::fabs(fit.covariance.at(r, c) - want) < 3.5 * se);
        }
    }

    // and vs the target itself, at the acceptance tolerances
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::fabs(fit.mean[i] - mu[i]) < 3.0 * sigma / std::sqrt(1.0 * n) + 0.01);
    }
}

TEST_CASE("single-step sampler collapses to a scaled gaussian") {
    const auto s = build_linear_schedule(1, 0.1, 0.1);
    const DenoiserFn zero = [](const Sample& x, std::size_t) {
        return Sample(x.size(), 0.0);
    };
    const std::uint64_t seed = 99;
    RngStream rng(seed);
    const auto out = ancestral_sample(zero, s, 2, 3, rng);

    RngStream replay(seed);
    for (const auto& sample : out) {
        for (double v : sample) {
            CHECK(v == doctest::Approx(replay.gaussian() / std::sqrt(0.9))
                           .epsilon(1e-15));
        }
    }
}

TEST_CASE("ancestral sampling is a pure function of the seed") {
    const auto s = build_linear_schedule(25, 1e-3, 0.1);
    const auto den = optimal_denoiser_gaussian(
        GaussianSpec::isotropic({0.3, 0.3}, 1.0), s);
    RngStream a(123);
    RngStream b(123);
    const auto sa = ancestral_sample(den, s, 2, 20, a);
    const auto sb = ancestral_sample(den, s, 2, 20, b);
    CHECK(sa == sb);
}
