#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "llcm/autodiff.hpp"
#include "llcm/distill.hpp"
#include "llcm/mlp.hpp"
#include "llcm/rng.hpp"

namespace llcm {

struct GradcheckResult {
    std::string check;
    std::string worst_tensor;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// ||a - b|| / max(||a||, ||b||, 1e-12)
inline double relative_error(const Tensor& a, const Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

/// A scalar function of named input tensors, built on a fresh tape.
/// `build` registers the inputs as leaves (in order) and returns the loss.
using GradcheckFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline GradcheckResult gradcheck(const std::string& name, std::vector<std::pair<std::string, Tensor>> inputs, const GradcheckFn& build, std::optional<Op> fault = {}, double h = 1e-5, double tol = 1e-4) {
    auto eval = [&](const std::vector<std::pair<std::string, Tensor>>& in, bool grads, std::vector<Tensor>* out) {
        Tape tape;
        tape.inject_sign_flip(fault);
        std::vector<Var> leaves;
        for (const auto& [n, t] : in) leaves.push_back(tape.leaf(t));
        const Var loss = build(tape, leaves);
        if (grads) {
            tape.backward(loss);
            for (const Var& l : leaves) out->push_back(tape.grad(l));
        }
        return loss.value()[0];
    };
    std::vector<Tensor> analytic;
    eval(inputs, true, &analytic);
    GradcheckResult res{name, "", 0.0, true};
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor numeric(inputs[k].second.shape());
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double orig = inputs[k].second[i];
            inputs[k].second[i] = orig + h;
            const double up = eval(inputs, false, nullptr);
            inputs[k].second[i] = orig - h;
            const double dn = eval(inputs, false, nullptr);
            inputs[k].second[i] = orig;
            numeric[i] = (up - dn) / (2.0 * h);
        }
        const double err = relative_error(analytic[k], numeric);
        if (err >= res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_tensor = inputs[k].first;
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

/// Finite-difference suite over every primitive op plus full network losses.
inline std::vector<GradcheckResult> run_gradcheck(std::optional<Op> fault = {}, double h = 1e-5, double tol = 1e-4) {
    Rng rng(20240611);
    auto rnd = [&](std::size_t r, std::size_t c) { return Tensor::randn(r, c, rng); };
    auto pos = [&](std::size_t r, std::size_t c) {
        Tensor t(Shape{r, c});
        for (auto& v : t.values()) v = rng.uniform(0.5, 2.0);
        return t;
    };
    // random projection so every output entry contributes with a distinct weight;
    // the mul check projects through square instead, or a flipped mul would
    // flip twice and cancel
    auto project = [](Tape& tape, Var y, std::uint64_t seed, bool avoid_mul = false) {
        if (avoid_mul) return sum(square(y));
        Rng prng(seed);
        const Tensor w = Tensor::randn(y.value().rows(), y.value().cols(), prng);
        return sum(mul(y, tape.constant(w)));
    };
    std::vector<GradcheckResult> out;
    auto unary = [&](const std::string& name, Tensor x, std::function<Var(Var)> f) {
        out.push_back(gradcheck(name, {{"x", std::move(x)}}, [&](Tape& t, const std::vector<Var>& v) { return project(t, f(v[0]), 1); }, fault, h, tol));
    };
    auto binary = [&](const std::string& name, Tensor a, Tensor b, std::function<Var(Var, Var)> f) {
        out.push_back(gradcheck(name, {{"a", std::move(a)}, {"b", std::move(b)}}, [&](Tape& t, const std::vector<Var>& v) { return project(t, f(v[0], v[1]), 2, name == "mul"); }, fault, h, tol));
    };

    binary("matmul", rnd(4, 3), rnd(3, 5), [](Var a, Var b) { return matmul(a, b); });
    binary("add_bias", rnd(4, 3), rnd(1, 3), [](Var a, Var b) { return add_bias(a, b); });
    binary("add", rnd(3, 3), rnd(3, 3), [](Var a, Var b) { return add(a, b); });
    binary("sub", rnd(3, 3), rnd(3, 3), [](Var a, Var b) { return sub(a, b); });
    binary("mul", rnd(3, 3), rnd(3, 3), [](Var a, Var b) { return mul(a, b); });
    unary("scale", rnd(3, 2), [](Var a) { return scale(a, -1.7); });
    const std::vector<double> coeffs{0.3, -2.0, 1.1};
    unary("scale_rows", rnd(3, 2), [&](Var a) { return scale_rows(a, coeffs); });
    unary("add_scalar", rnd(3, 2), [](Var a) { return add_scalar(a, 0.7); });
    unary("gelu", rnd(4, 4), [](Var a) { return gelu(a); });
    unary("square", rnd(3, 3), [](Var a) { return square(a); });
    unary("sqrt", pos(3, 3), [](Var a) { return sqrt(a); });
    out.push_back(gradcheck("sum", {{"x", rnd(3, 3)}}, [](Tape&, const std::vector<Var>& v) { return sum(square(v[0])); }, fault, h, tol));
    out.push_back(gradcheck("mean", {{"x", rnd(3, 3)}}, [](Tape&, const std::vector<Var>& v) { return mean(square(v[0])); }, fault, h, tol));
    unary("row_sum", rnd(4, 3), [](Var a) { return row_sum(a); });
    binary("concat_cols", rnd(3, 2), rnd(3, 4), [](Var a, Var b) {
        const Var parts[] = {a, b};
        return concat_cols(parts);
    });

    // full network: denoising loss of a small MLP w.r.t. every layer
    MlpConfig cfg;
    cfg.hidden = {16, 16, 16};
    const MlpParams params = init_mlp(cfg, 7, false);
    const std::size_t b = 6;
    const Tensor x = rnd(b, cfg.point_dim), target = rnd(b, cfg.point_dim);
    std::vector<int> labels{0, 1, 2, 3, kNullToken, 1};
    std::vector<double> t{0.05, 0.2, 0.4, 0.6, 0.8, 1.0};
    const Tensor ce = embed_conditions(labels, cfg.n_classes, cfg.c_embed_dim), te = embed_times(t, cfg.t_embed_dim);
    std::vector<std::pair<std::string, Tensor>> named;
    params.for_each([&](const std::string& n, const Tensor& v) { named.emplace_back(n, v); });
    auto as_vars = [](const std::vector<Var>& v) {
        MlpVars mv;
        for (std::size_t i = 0; i < v.size(); i += 2) {
            mv.weights.push_back(v[i]);
            mv.biases.push_back(v[i + 1]);
        }
        return mv;
    };
    out.push_back(gradcheck("mlp_dsm_loss", named, [&](Tape& tape, const std::vector<Var>& v) {
        const Var pred = mlp_forward(tape, params, as_vars(v), x, ce, te);
        return mean(row_sum(square(sub(pred, tape.constant(target)))));
    }, fault, h, tol));

    // consistency head on top of a guidance-conditioned network
    DistillConfig dc;
    Schedule sched;
    ConsistencyHead head = make_student(cfg, dc, sched, 11);
    head.params = init_mlp(head.params.config, 13, false);
    std::vector<std::pair<std::string, Tensor>> hnamed;
    head.params.for_each([&](const std::string& n, const Tensor& v) { hnamed.emplace_back(n, v); });
    const std::vector<double> omega{0.0, 1.0, 2.5, 4.0, 0.5, 3.0};
    std::vector<int> hl{0, 1, 2, 3, 0, 1};
    out.push_back(gradcheck("consistency_loss", hnamed, [&](Tape& tape, const std::vector<Var>& v) {
        const Var f = consistency_forward(tape, head, as_vars(v), x, omega, hl, t, sched);
        Var d = row_sum(square(sub(f, tape.constant(target))));
        return mean(add_scalar(sqrt(add_scalar(d, 1e-3)), -0.03));
    }, fault, h, tol));
    return out;
}

}  // namespace llcm
