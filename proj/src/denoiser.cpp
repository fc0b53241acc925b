#include "feddm/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace feddm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// Widths of every activation vector: input, hiddens, output.
std::vector<std::size_t> layer_widths(const DenoiserConfig& c) {
    std::vector<std::size_t> w;
    w.reserve(c.hidden_dims.size() + 2);
    w.push_back(c.input_dim + c.time_embed_dim);
    for (std::size_t h : c.hidden_dims) w.push_back(h);
    w.push_back(c.input_dim);
    return w;
}

void check_inputs(const ParamVector& params, const DenoiserConfig& config,
                  const Sample& x_t, std::size_t t, std::size_t steps) {
    config.validate();
    if (params.size() != param_count(config)) {
        throw std::invalid_argument("denoiser: params length does not match config");
    }
    if (x_t.size() != config.input_dim) {
        throw std::invalid_argument("denoiser: x_t dimension mismatch");
    }
    if (t < 1 || t > steps) {
        throw std::invalid_argument("denoiser: timestep out of range [1, steps]");
    }
}

}  // namespace

void DenoiserConfig::validate() const {
    if (input_dim < 1 || time_embed_dim < 1) {
        throw std::invalid_argument("DenoiserConfig: widths must be >= 1");
    }
    for (std::size_t h : hidden_dims) {
        if (h < 1) throw std::invalid_argument("DenoiserConfig: widths must be >= 1");
    }
}

std::size_t param_count(const DenoiserConfig& config) {
    config.validate();
    const auto widths = layer_widths(config);
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        n += widths[l + 1] * (widths[l] + 1);  // weights + bias
    }
    return n;
}

ParamVector init_params(const DenoiserConfig& config, RngStream& rng) {
    const auto widths = layer_widths(config);
    ParamVector params;
    params.reserve(param_count(config));
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const double a = 1.0 / std::sqrt(static_cast<double>(widths[l]));
        const std::size_t n = widths[l + 1] * (widths[l] + 1);
        for (std::size_t i = 0; i < n; ++i) {
            params.push_back(a * (2.0 * rng.uniform01() - 1.0));
        }
    }
    return params;
}

std::vector<double> time_embedding(std::size_t t, std::size_t dim) {
    std::vector<double> emb(dim);
    const std::size_t half = (dim + 1) / 2;
    const double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
    const double td = static_cast<double>(t);
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(1e4) * static_cast<double>(k) / denom);
        emb[2 * k] = std::sin(td * freq);
        if (2 * k + 1 < dim) emb[2 * k + 1] = std::cos(td * freq);
    }
    return emb;
}

namespace {

// Runs the forward pass, keeping pre-activations and activations of every
// layer when acts/preacts are provided (needed by the backward pass).
Sample run_forward(const ParamVector& params, const DenoiserConfig& config,
                   const Sample& x_t, std::size_t t,
                   std::vector<std::vector<double>>* acts,
                   std::vector<std::vector<double>>* preacts) {
    const auto widths = layer_widths(config);
    std::vector<double> z(widths[0]);
    for (std::size_t i = 0; i < config.input_dim; ++i) z[i] = x_t[i];
    const auto emb = time_embedding(t, config.time_embed_dim);
    for (std::size_t i = 0; i < emb.size(); ++i) z[config.input_dim + i] = emb[i];

    if (acts) acts->push_back(z);

    std::size_t offset = 0;
    const std::size_t n_layers = widths.size() - 1;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        const double* w = params.data() + offset;
        const double* b = w + out * in;
        std::vector<double> a(out);
        for (std::size_t r = 0; r < out; ++r) {
            double s = b[r];
            const double* row = w + r * in;
            for (std::size_t c = 0; c < in; ++c) s += row[c] * z[c];
            a[r] = s;
        }
        offset += out * (in + 1);
        const bool last = l + 1 == n_layers;
        if (preacts) preacts->push_back(a);
        if (!last) {
            for (double& v : a) v = silu(v);
        }
        z = std::move(a);
        if (acts && !last) acts->push_back(z);
    }
    return z;
}

}  // namespace

Sample forward(const ParamVector& params, const DenoiserConfig& config,
               const Sample& x_t, std::size_t t, std::size_t steps) {
    check_inputs(params, config, x_t, t, steps);
    return run_forward(params, config, x_t, t, nullptr, nullptr);
}

double backward_into(const ParamVector& params, const DenoiserConfig& config,
                     const Sample& x_t, std::size_t t, std::size_t steps,
                     const Sample& eps, GradientVector& accum) {
    check_inputs(params, config, x_t, t, steps);
    if (eps.size() != config.input_dim) {
        throw std::invalid_argument("backward: eps dimension mismatch");
    }
    if (accum.size() != params.size()) {
        throw std::invalid_argument("backward: accumulator length mismatch");
    }

    std::vector<std::vector<double>> acts;      // activations per layer input
    std::vector<std::vector<double>> preacts;   // pre-activations per layer
    const Sample y = run_forward(params, config, x_t, t, &acts, &preacts);

    double loss = 0.0;
    std::vector<double> delta(y.size());  // dL/dy
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = eps[i] - y[i];
        loss += r * r;
        delta[i] = -2.0 * r;
    }

    const auto widths = layer_widths(config);
    const std::size_t n_layers = widths.size() - 1;

    // offsets of each layer's weight block in the flat vector
    std::vector<std::size_t> offsets(n_layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        offsets[l] = off;
        off += widths[l + 1] * (widths[l] + 1);
    }

    for (std::size_t li = n_layers; li-- > 0;) {
        const std::size_t in = widths[li];
        const std::size_t out = widths[li + 1];
        const bool last = li + 1 == n_layers;
        // delta currently holds dL/dz for this layer's output; convert to
        // dL/da through the activation (output layer is linear).
        if (!last) {
            for (std::size_t r = 0; r < out; ++r) {
                delta[r] *= silu_grad(preacts[li][r]);
            }
        }
        const double* w = params.data() + offsets[li];
        double* gw = accum.data() + offsets[li];
        double* gb = gw + out * in;
        const std::vector<double>& z = acts[li];
        std::vector<double> prev(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double d = delta[r];
            double* grow = gw + r * in;
            const double* wrow = w + r * in;
            for (std::size_t c = 0; c < in; ++c) {
                grow[c] += d * z[c];
                prev[c] += d * wrow[c];
            }
            gb[r] += d;
        }
        delta = std::move(prev);
    }
    return loss;
}

BackwardResult backward(const ParamVector& params, const DenoiserConfig& config,
                        const Sample& x_t, std::size_t t, std::size_t steps,
                        const Sample& eps) {
    BackwardResult res;
    res.grad.assign(params.size(), 0.0);
    res.loss = backward_into(params, config, x_t, t, steps, eps, res.grad);
    return res;
}

ParamVector axpy(const ParamVector& params, const std::vector<double>& direction,
                 double scale) {
    if (params.size() != direction.size()) {
        throw std::invalid_argument("axpy: length mismatch");
    }
    ParamVector out = params;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * direction[i];
    return out;
}

void axpy_inplace(ParamVector& params, const std::vector<double>& direction,
                  double scale) {
    if (params.size() != direction.size()) {
        throw std::invalid_argument("axpy: length mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] += scale * direction[i];
    }
}

double forward_lipschitz_bound(const ParamVector& params,
                               const DenoiserConfig& config) {
    config.validate();
    if (params.size() != param_count(config)) {
        throw std::invalid_argument("lipschitz bound: params length mismatch");
    }
    // max slope of silu is < 1.1
    constexpr double kSlopeBound = 1.1;
    const auto widths = layer_widths(config);
    double bound = 1.0;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        double fro = 0.0;
        for (std::size_t i = 0; i < out * in; ++i) {
            const double v = params[offset + i];
            fro += v * v;
        }
        bound *= std::sqrt(fro);
        if (l + 2 < widths.size()) bound *= kSlopeBound;
        offset += out * (in + 1);
    }
    return bound;
}

DenoiserFn make_denoiser(ParamVector params, DenoiserConfig config,
                         std::size_t steps) {
    return [params = std::move(params), config = std::move(config), steps](
               const Sample& x_t, std::size_t t) {
        return forward(params, config, x_t, t, steps);
    };
}

void save_params(const std::string& path, const ParamVector& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    auto put_u64 = [&out](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    };
    put_u64(params.size());
    for (double d : params) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        std::memcpy(&bits, &d, 8);
        put_u64(bits);
    }
    if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

ParamVector load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    auto get_u64 = [&in, &path]() {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw std::runtime_error("load_params: truncated file " + path);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    };
    const std::uint64_t n = get_u64();
    ParamVector params(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t bits = get_u64();
        std::memcpy(&params[i], &bits, 8);
    }
    return params;
}

}  // namespace feddm
