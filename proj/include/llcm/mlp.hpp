#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "llcm/autodiff.hpp"
#include "llcm/rng.hpp"
#include "llcm/tensor.hpp"

namespace llcm {

/// Label value standing for the unconditional (empty) condition.
inline constexpr int kNullToken = -1;

/// Fourier time features: [sin(w_k t)..., cos(w_k t)...] with w_k spaced
/// geometrically in [1, 100].
inline std::vector<double> fourier_features(double x, std::size_t dim, double max_freq) {
    if (dim == 0 || dim % 2 != 0) throw Error("fourier embedding dim must be even and positive, got " + std::to_string(dim));
    const std::size_t half = dim / 2;
    std::vector<double> out(dim);
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = half == 1 ? 1.0 : std::pow(max_freq, static_cast<double>(k) / static_cast<double>(half - 1));
        out[k] = std::sin(freq * x);
        out[half + k] = std::cos(freq * x);
    }
    return out;
}

inline Tensor embed_time(double t, std::size_t dim) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error("embed_time: t = " + std::to_string(t) + " outside [0, 1]");
    return Tensor({1, dim}, fourier_features(t, dim, 100.0));
}

/// One-hot class code padded with zeros to `dim`; the null token maps to zeros.
inline Tensor embed_condition(int c, std::size_t n_classes, std::size_t dim) {
    if (dim < n_classes) throw Error("embed_condition: dim " + std::to_string(dim) + " smaller than class count " + std::to_string(n_classes));
    Tensor e({1, dim});
    if (c == kNullToken) return e;
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes)
        throw Error("embed_condition: class " + std::to_string(c) + " outside [0, " + std::to_string(n_classes) + ")");
    e[static_cast<std::size_t>(c)] = 1.0;
    return e;
}

/// Guidance-scale features; low frequencies since omega spans a few units.
inline Tensor embed_guidance(double omega, std::size_t dim) {
    if (!std::isfinite(omega) || omega < 0.0) throw Error("embed_guidance: omega must be finite and >= 0");
    return Tensor({1, dim}, fourier_features(omega, dim, 4.0));
}

inline Tensor embed_times(std::span<const double> t, std::size_t dim) {
    Tensor out = Tensor::zeros(t.size(), dim);
    for (std::size_t r = 0; r < t.size(); ++r) {
        const Tensor e = embed_time(t[r], dim);
        std::copy(e.values().begin(), e.values().end(), out.row(r).begin());
    }
    return out;
}

inline Tensor embed_conditions(std::span<const int> labels, std::size_t n_classes, std::size_t dim) {
    Tensor out = Tensor::zeros(labels.size(), dim);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const Tensor e = embed_condition(labels[r], n_classes, dim);
        std::copy(e.values().begin(), e.values().end(), out.row(r).begin());
    }
    return out;
}

inline Tensor embed_guidances(std::span<const double> omega, std::size_t dim) {
    Tensor out = Tensor::zeros(omega.size(), dim);
    for (std::size_t r = 0; r < omega.size(); ++r) {
        const Tensor e = embed_guidance(omega[r], dim);
        std::copy(e.values().begin(), e.values().end(), out.row(r).begin());
    }
    return out;
}

struct MlpConfig {
    std::size_t point_dim = 2;
    std::size_t n_classes = 4;
    std::size_t c_embed_dim = 8;
    std::size_t t_embed_dim = 16;
    /// 0 for plain noise predictors; > 0 adds a guidance-scale input.
    std::size_t omega_embed_dim = 0;
    std::vector<std::size_t> hidden = {128, 128, 128};

    std::size_t input_dim() const { return point_dim + c_embed_dim + t_embed_dim + omega_embed_dim; }

    bool operator==(const MlpConfig&) const = default;
};

struct Linear {
    Tensor weight;  // (in, out)
    Tensor bias;    // (1, out)

    bool operator==(const Linear&) const = default;
};

/// Weights of an MLP; also used as the container for gradients and moments.
struct MlpParams {
    MlpConfig config;
    std::vector<Linear> layers;

    bool operator==(const MlpParams&) const = default;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Visits every parameter tensor in canonical order with its name.
    template <class F>
    void for_each(F&& f) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            f("layer" + std::to_string(i) + ".weight", layers[i].weight);
            f("layer" + std::to_string(i) + ".bias", layers[i].bias);
        }
    }
    template <class F>
    void for_each(F&& f) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            f("layer" + std::to_string(i) + ".weight", layers[i].weight);
            f("layer" + std::to_string(i) + ".bias", layers[i].bias);
        }
    }

    MlpParams zeros_like() const {
        MlpParams z{config, {}};
        for (const auto& l : layers) z.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
        return z;
    }

    bool same_layout(const MlpParams& o) const {
        if (layers.size() != o.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (!layers[i].weight.same_shape(o.layers[i].weight) || !layers[i].bias.same_shape(o.layers[i].bias)) return false;
        return true;
    }
};

inline std::vector<std::size_t> layer_widths(const MlpConfig& cfg) {
    std::vector<std::size_t> w{cfg.input_dim()};
    w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
    w.push_back(cfg.point_dim);
    return w;
}

inline std::size_t parameter_count(const MlpConfig& cfg) {
    const auto w = layer_widths(cfg);
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) n += w[i] * w[i + 1] + w[i + 1];
    return n;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline MlpParams init_mlp(const MlpConfig& cfg, std::uint64_t seed, bool zero_final_layer) {
    if (cfg.point_dim == 0) throw Error("init_mlp: point_dim must be positive");
    Rng rng(derive_seed(seed, 0x6d6c70));
    const auto w = layer_widths(cfg);
    MlpParams p{cfg, {}};
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        Linear l{Tensor::zeros(w[i], w[i + 1]), Tensor::zeros(1, w[i + 1])};
        const bool last = i + 2 == w.size();
        if (!(last && zero_final_layer)) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(w[i]));
            for (auto& v : l.weight.values()) v = rng.uniform(-bound, bound);
        }
        p.layers.push_back(std::move(l));
    }
    return p;
}

namespace detail {
inline Tensor concat_inputs(const MlpConfig& cfg, const Tensor& x, const Tensor& c_embed, const Tensor& t_embed, const Tensor* w_embed) {
    const std::size_t b = x.rows();
    auto check = [&](const Tensor& t, std::size_t cols, const char* name) {
        if (t.rows() != b || t.cols() != cols)
            throw Error(std::string("mlp_forward: operand '") + name + "' has shape " + shape_str(t.shape()) + ", expected (" + std::to_string(b) + ", " + std::to_string(cols) + ")");
    };
    check(x, cfg.point_dim, "x");
    check(c_embed, cfg.c_embed_dim, "c_embed");
    check(t_embed, cfg.t_embed_dim, "t_embed");
    if (cfg.omega_embed_dim > 0) {
        if (!w_embed) throw Error("mlp_forward: operand 'omega_embed' missing for a guidance-conditioned network");
        check(*w_embed, cfg.omega_embed_dim, "omega_embed");
    } else if (w_embed && !w_embed->empty()) {
        throw Error("mlp_forward: operand 'omega_embed' given to a network without guidance input");
    }
    Tensor in = Tensor::zeros(b, cfg.input_dim());
    for (std::size_t r = 0; r < b; ++r) {
        auto dst = in.row(r).begin();
        dst = std::copy(x.row(r).begin(), x.row(r).end(), dst);
        dst = std::copy(c_embed.row(r).begin(), c_embed.row(r).end(), dst);
        dst = std::copy(t_embed.row(r).begin(), t_embed.row(r).end(), dst);
        if (cfg.omega_embed_dim > 0) std::copy(w_embed->row(r).begin(), w_embed->row(r).end(), dst);
    }
    return in;
}
}  // namespace detail

/// Inference-only forward pass.
inline Tensor mlp_forward(const MlpParams& params, const Tensor& x, const Tensor& c_embed, const Tensor& t_embed, const Tensor* omega_embed = nullptr) {
    Tensor h = detail::concat_inputs(params.config, x, c_embed, t_embed, omega_embed);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const Linear& l = params.layers[i];
        Tensor y = matmul(h, l.weight);
        const bool last = i + 1 == params.layers.size();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            auto row = y.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) {
                row[j] += l.bias[j];
                if (!last) row[j] = gelu(row[j]);
            }
        }
        h = std::move(y);
    }
    require_finite(h, "mlp_forward");
    return h;
}

/// Parameters registered as leaves on a tape.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

inline MlpVars register_params(Tape& tape, const MlpParams& params, bool requires_grad = true) {
    MlpVars v;
    for (const auto& l : params.layers) {
        v.weights.push_back(tape.leaf(l.weight, requires_grad));
        v.biases.push_back(tape.leaf(l.bias, requires_grad));
    }
    return v;
}

/// Recorded forward pass; `input` is the already-concatenated network input.
inline Var mlp_forward(const MlpVars& vars, Var input) {
    Var h = input;
    for (std::size_t i = 0; i < vars.weights.size(); ++i) {
        h = add_bias(matmul(h, vars.weights[i]), vars.biases[i]);
        if (i + 1 < vars.weights.size()) h = gelu(h);
    }
    return h;
}

inline Var mlp_forward(Tape& tape, const MlpParams& params, const MlpVars& vars, const Tensor& x, const Tensor& c_embed, const Tensor& t_embed, const Tensor* omega_embed = nullptr) {
    return mlp_forward(vars, tape.constant(detail::concat_inputs(params.config, x, c_embed, t_embed, omega_embed)));
}

/// Gradients of the last tape.backward() for each registered parameter.
inline MlpParams collect_grads(Tape& tape, const MlpParams& params, const MlpVars& vars) {
    MlpParams g = params.zeros_like();
    for (std::size_t i = 0; i < vars.weights.size(); ++i) {
        g.layers[i].weight = tape.grad(vars.weights[i]);
        g.layers[i].bias = tape.grad(vars.biases[i]);
    }
    return g;
}

/// Copies a network and inserts zero input rows for a guidance embedding, so
/// the result computes the same function and ignores omega.
inline MlpParams with_guidance_input(const MlpParams& base, std::size_t omega_embed_dim) {
    if (base.config.omega_embed_dim != 0) throw Error("with_guidance_input: network already has a guidance input");
    MlpParams p = base;
    p.config.omega_embed_dim = omega_embed_dim;
    const Tensor& w = base.layers.at(0).weight;
    Tensor nw = Tensor::zeros(w.rows() + omega_embed_dim, w.cols());
    std::copy(w.values().begin(), w.values().end(), nw.values().begin());
    p.layers[0].weight = std::move(nw);
    return p;
}

}  // namespace llcm
