#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "feddm/diffusion.hpp"
#include "feddm/rng.hpp"

namespace feddm {

// Flat parameter vector of one denoiser; the unit of aggregation.
using ParamVector = std::vector<double>;
using GradientVector = std::vector<double>;

enum class Activation {
    kSilu,  // x * sigmoid(x); smooth everywhere
};

// Feed-forward noise predictor eps_w(x_t, t). The timestep enters through a
// sinusoidal embedding concatenated to x_t. Output layer is linear with
// width input_dim.
struct DenoiserConfig {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden_dims = {32, 32};
    std::size_t time_embed_dim = 8;
    Activation activation = Activation::kSilu;

    void validate() const;
};

// Total parameter count for the layout: per layer, row-major weight matrix
// followed by its bias vector, layers in forward order.
std::size_t param_count(const DenoiserConfig& config);

// Uniform init in [-a, a] with a = 1 / sqrt(fan_in), drawn layer by layer.
ParamVector init_params(const DenoiserConfig& config, RngStream& rng);

// Sinusoidal embedding with log-spaced frequencies, emb[2k] = sin(t w_k),
// emb[2k+1] = cos(t w_k), w_k from 1 down to 1e-4.
std::vector<double> time_embedding(std::size_t t, std::size_t dim);

Sample forward(const ParamVector& params, const DenoiserConfig& config,
               const Sample& x_t, std::size_t t, std::size_t steps);

struct BackwardResult {
    double loss = 0.0;
    GradientVector grad;
};

// loss = || eps - forward(...) ||^2 and its exact gradient in the params.
BackwardResult backward(const ParamVector& params, const DenoiserConfig& config,
                        const Sample& x_t, std::size_t t, std::size_t steps,
                        const Sample& eps);

// Same, but adds the gradient into accum (for minibatch accumulation)
// and returns the loss.
double backward_into(const ParamVector& params, const DenoiserConfig& config,
                     const Sample& x_t, std::size_t t, std::size_t steps,
                     const Sample& eps, GradientVector& accum);

// params + scale * direction; inputs untouched.
ParamVector axpy(const ParamVector& params, const std::vector<double>& direction,
                 double scale);

// In-place SGD-style update, w += scale * direction.
void axpy_inplace(ParamVector& params, const std::vector<double>& direction,
                  double scale);

// Upper bound on the Lipschitz constant of x_t -> forward(x_t, t):
// product of layer weight Frobenius norms times the activation slope bound.
double forward_lipschitz_bound(const ParamVector& params,
                               const DenoiserConfig& config);

// Denoiser handle backed by a parameter snapshot, for sampling/evaluation.
DenoiserFn make_denoiser(ParamVector params, DenoiserConfig config,
                         std::size_t steps);

// Checkpoint format: u64 little-endian length header, then that many
// IEEE-754 doubles, little-endian.
void save_params(const std::string& path, const ParamVector& params);
ParamVector load_params(const std::string& path);

}  // namespace feddm
