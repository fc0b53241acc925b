#include "feddm/schedule.hpp"

#include <stdexcept>

namespace feddm {

NoiseSchedule build_linear_schedule(std::size_t steps, double beta_start,
                                    double beta_end) {
    if (steps == 0) {
        throw std::invalid_argument("build_linear_schedule: steps must be >= 1");
    }
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw std::invalid_argument(
            "build_linear_schedule: need 0 < beta_start <= beta_end < 1");
    }

    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);

    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac =
            steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

}  // namespace feddm
