#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "llcm/mlp.hpp"

namespace llcm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    MlpParams m;
    MlpParams v;
    std::uint64_t step = 0;

    static AdamState fresh(const MlpParams& params, AdamConfig cfg = {}) {
        return AdamState{cfg, params.zeros_like(), params.zeros_like(), 0};
    }
};

/// One bias-corrected Adam update in place.
inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state) {
    if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
        throw Error("adam_step: parameter, gradient and moment layouts differ");
    grads.for_each([](const std::string& name, const Tensor& g) {
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient in " + name);
    });
    const AdamConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight);
        update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
    }
}

/// Exponential moving average of a parameter set (the distillation target).
struct EmaParams {
    MlpParams shadow;
    double decay = 0.95;
};

inline void ema_update(EmaParams& ema, const MlpParams& online) {
    if (!(ema.decay >= 0.0 && ema.decay < 1.0)) throw Error("ema_update: decay must lie in [0, 1)");
    if (!ema.shadow.same_layout(online)) throw Error("ema_update: shadow and online layouts differ");
    const double mu = ema.decay;
    auto blend = [mu](Tensor& s, const Tensor& o) {
        // equal entries are left untouched so a synced shadow stays bit-identical
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] != o[i]) s[i] = mu * s[i] + (1.0 - mu) * o[i];
    };
    for (std::size_t l = 0; l < online.layers.size(); ++l) {
        blend(ema.shadow.layers[l].weight, online.layers[l].weight);
        blend(ema.shadow.layers[l].bias, online.layers[l].bias);
    }
}

}  // namespace llcm
