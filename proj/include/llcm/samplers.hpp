#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llcm/noise_model.hpp"
#include "llcm/rng.hpp"
#include "llcm/schedule.hpp"
#include "llcm/toy_worlds.hpp"

namespace llcm {

/// Condition value meaning "cycle through every class" (label = i mod n_classes).
inline constexpr int kAllClasses = -2;

enum class SolverKind { EulerMaruyama, EulerOde, Ddim, Leapfrog };

inline std::string to_string(SolverKind k) {
    switch (k) {
        case SolverKind::EulerMaruyama: return "euler_maruyama";
        case SolverKind::EulerOde: return "euler_ode";
        case SolverKind::Ddim: return "ddim";
        case SolverKind::Leapfrog: return "leapfrog";
    }
    return "?";
}

inline constexpr const char* kValidSolvers = "euler_maruyama, euler_ode, ddim, leapfrog";

inline SolverKind solver_from_string(const std::string& s) {
    if (s == "euler_maruyama") return SolverKind::EulerMaruyama;
    if (s == "euler_ode") return SolverKind::EulerOde;
    if (s == "ddim") return SolverKind::Ddim;
    if (s == "leapfrog") return SolverKind::Leapfrog;
    throw Error("unknown solver '" + s + "' (valid: " + kValidSolvers + ")");
}

struct SamplerConfig {
    SolverKind solver = SolverKind::Ddim;
    std::size_t n_steps = 50;
    double omega = 0.0;
    int condition = kNullToken;
    std::uint64_t seed = 0;
    double leapfrog_h = 0.5;
    double t_max = 1.0;
    /// Negative means the schedule default 1/N.
    double t_min = -1.0;

    void validate() const {
        if (n_steps < 1) throw Error("sampler: n_steps must be >= 1");
        if (!(omega >= 0.0)) throw Error("sampler: omega must be >= 0");
        if (!(leapfrog_h > 0.0)) throw Error("sampler: leapfrog h must be > 0");
    }
};

inline std::vector<int> condition_labels(int condition, std::size_t n, std::size_t n_classes) {
    std::vector<int> labels(n, condition);
    if (condition == kAllClasses) {
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % n_classes);
    } else if (condition != kNullToken && (condition < 0 || static_cast<std::size_t>(condition) >= n_classes)) {
        throw Error("condition " + std::to_string(condition) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    return labels;
}

/// eps_cond + omega * (eps_cond - eps_uncond), i.e. (1 + w) eps_c - w eps_u.
inline Tensor cfg_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double omega) {
    require_same_shape(eps_cond, eps_uncond, "cfg_noise");
    return axpby(1.0 + omega, eps_cond, -omega, eps_uncond);
}

inline Tensor cfg_noise(const Tensor& eps_cond, const Tensor& eps_uncond, std::span<const double> omega) {
    std::vector<double> a(omega.size()), b(omega.size());
    for (std::size_t r = 0; r < omega.size(); ++r) {
        a[r] = 1.0 + omega[r];
        b[r] = -omega[r];
    }
    return row_axpby(a, eps_cond, b, eps_uncond);
}

namespace detail {
inline void check_rows(const Tensor& z, std::size_t n, const char* what, const char* op) {
    if (n != z.rows()) throw Error(std::string(op) + ": " + what + " count " + std::to_string(n) + " != batch " + std::to_string(z.rows()));
}

inline void check_descending(std::span<const double> t, std::span<const double> s, const char* op, bool allow_equal = false) {
    for (std::size_t r = 0; r < t.size(); ++r)
        if (allow_equal ? !(s[r] <= t[r]) : !(s[r] < t[r]))
            throw Error(std::string(op) + ": target time " + std::to_string(s[r]) + (allow_equal ? " > " : " >= ") + "current time " + std::to_string(t[r]));
}
}  // namespace detail

/// Guided noise prediction at per-row (label, omega, t). The unconditional
/// branch is skipped when every omega is zero.
inline Tensor guided_eps(const NoiseModel& model, const Tensor& z, std::span<const int> labels, std::span<const double> omega, std::span<const double> t) {
    detail::check_rows(z, labels.size(), "label", "guided_eps");
    detail::check_rows(z, omega.size(), "omega", "guided_eps");
    detail::check_rows(z, t.size(), "time", "guided_eps");
    Tensor eps_c = model.predict(z, labels, t);
    bool any = false;
    for (double w : omega) any = any || w != 0.0;
    if (!any) return eps_c;
    const std::vector<int> null_labels(labels.size(), kNullToken);
    return cfg_noise(eps_c, model.predict(z, null_labels, t), omega);
}

struct X0Eps {
    Tensor x0;
    Tensor eps;
};

/// x0_hat = (z - sigma_t eps_hat) / alpha_t with eps_hat the guided prediction.
inline X0Eps predict_x0_eps(const NoiseModel& model, const Tensor& z, std::span<const int> labels, std::span<const double> omega, std::span<const double> t, const Schedule& sched) {
    Tensor eps = guided_eps(model, z, labels, omega, t);
    Tensor x0(z.shape());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto [a, s] = sched.alpha_sigma(t[r]);
        if (a < 1e-8) throw NumericError("predict_x0_eps: alpha(t) = " + std::to_string(a) + " below 1e-8");
        for (std::size_t j = 0; j < z.cols(); ++j) x0(r, j) = (z(r, j) - s * eps(r, j)) / a;
    }
    return {std::move(x0), std::move(eps)};
}

/// PF-ODE drift f z + g^2 / (2 sigma) eps, per row.
inline Tensor pf_ode_drift(const Tensor& z, const Tensor& eps, std::span<const double> f, std::span<const double> g2, std::span<const double> sigma) {
    require_same_shape(z, eps, "pf_ode_drift");
    std::vector<double> b(sigma.size());
    for (std::size_t r = 0; r < b.size(); ++r) b[r] = g2[r] / (2.0 * sigma[r]);
    return row_axpby(f, z, b, eps);
}

/// z + dt (f z + g^2/sigma eps) + g sqrt(|dt|) noise, per row (dt < 0 in reverse time).
inline Tensor reverse_sde_update(const Tensor& z, const Tensor& eps, const Tensor& noise, std::span<const double> f, std::span<const double> g2, std::span<const double> sigma, std::span<const double> dt) {
    require_same_shape(z, eps, "reverse_sde_update");
    require_same_shape(z, noise, "reverse_sde_update");
    Tensor out(z.shape());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const double kick = std::sqrt(g2[r] * std::abs(dt[r]));
        for (std::size_t j = 0; j < z.cols(); ++j)
            out(r, j) = z(r, j) + dt[r] * (f[r] * z(r, j) + g2[r] / sigma[r] * eps(r, j)) + kick * noise(r, j);
    }
    return out;
}

namespace detail {
struct Coeffs {
    std::vector<double> f, g2, sigma;
};

inline Coeffs coefficients(const Schedule& sched, std::span<const double> t) {
    Coeffs c;
    for (double ti : t) {
        const auto dd = sched.drift_diffusion(ti);
        c.f.push_back(dd.f);
        c.g2.push_back(dd.g2);
        c.sigma.push_back(sched.alpha_sigma(ti).sigma);
    }
    return c;
}
}  // namespace detail

inline Tensor euler_ode_step(const NoiseModel& model, const Tensor& z, std::span<const int> labels, std::span<const double> omega, std::span<const double> t, std::span<const double> s, const Schedule& sched) {
    detail::check_rows(z, s.size(), "target time", "euler_ode_step");
    detail::check_descending(t, s, "euler_ode_step");
    const Tensor eps = guided_eps(model, z, labels, omega, t);
    const auto c = detail::coefficients(sched, t);
    const Tensor h = pf_ode_drift(z, eps, c.f, c.g2, c.sigma);
    std::vector<double> one(z.rows(), 1.0), dt(z.rows());
    for (std::size_t r = 0; r < dt.size(); ++r) dt[r] = s[r] - t[r];
    return row_axpby(one, z, dt, h);
}

inline Tensor euler_maruyama_step(const NoiseModel& model, const Tensor& z, std::span<const int> labels, std::span<const double> omega, std::span<const double> t, std::span<const double> s, const Tensor& noise, const Schedule& sched) {
    detail::check_rows(z, s.size(), "target time", "euler_maruyama_step");
    detail::check_descending(t, s, "euler_maruyama_step");
    const Tensor eps = guided_eps(model, z, labels, omega, t);
    const auto c = detail::coefficients(sched, t);
    std::vector<double> dt(z.rows());
    for (std::size_t r = 0; r < dt.size(); ++r) dt[r] = s[r] - t[r];
    return reverse_sde_update(z, eps, noise, c.f, c.g2, c.sigma, dt);
}

/// z_s = alpha_s x0_hat + sigma_s eps_hat; s == t returns z unchanged.
inline Tensor ddim_step(const Tensor& z, const Tensor& x0, const Tensor& eps, std::span<const double> t, std::span<const double> s, const Schedule& sched) {
    require_same_shape(z, x0, "ddim_step");
    require_same_shape(z, eps, "ddim_step");
    detail::check_rows(z, t.size(), "time", "ddim_step");
    detail::check_rows(z, s.size(), "target time", "ddim_step");
    detail::check_descending(t, s, "ddim_step", true);
    Tensor out(z.shape());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        if (s[r] == t[r]) {
            std::copy(z.row(r).begin(), z.row(r).end(), out.row(r).begin());
            continue;
        }
        const auto [a, sg] = sched.alpha_sigma(s[r]);
        for (std::size_t j = 0; j < z.cols(); ++j) out(r, j) = a * x0(r, j) + sg * eps(r, j);
    }
    return out;
}

/// Position, velocity and (per-row) time of the leapfrog integrator.
struct LeapfrogState {
    Tensor x;
    Tensor v;
    std::vector<double> t;

    static LeapfrogState start(Tensor x, std::vector<double> t) {
        Tensor v(x.shape());
        return {std::move(x), std::move(v), std::move(t)};
    }
};

/// One leapfrog step to time s. The model's (x0_hat, eps_hat) at the current
/// state give the DDIM-style initial position alpha_s x0_hat and velocity
/// v = sigma_s eps_hat; with v_half = 2 v the drift is x1 = alpha_s x0_hat + h v_half
/// (exactly DDIM at h = 1/2). The velocity is then kicked with the PF-ODE drift
/// at (x1, s): v_3/2 = v_half + h F(x1).
inline LeapfrogState leapfrog_step(const LeapfrogState& state, const NoiseModel& model, std::span<const int> labels, std::span<const double> omega, std::span<const double> s, double h, const Schedule& sched) {
    const Tensor& z = state.x;
    detail::check_rows(z, state.t.size(), "time", "leapfrog_step");
    detail::check_rows(z, s.size(), "target time", "leapfrog_step");
    detail::check_descending(state.t, s, "leapfrog_step");
    if (!(h >= 0.0)) throw Error("leapfrog_step: h must be >= 0");
    const X0Eps p = predict_x0_eps(model, z, labels, omega, state.t, sched);
    LeapfrogState next{Tensor(z.shape()), Tensor(z.shape()), std::vector<double>(s.begin(), s.end())};
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto [a, sg] = sched.alpha_sigma(s[r]);
        for (std::size_t j = 0; j < z.cols(); ++j) {
            const double v_half = 2.0 * sg * p.eps(r, j);
            next.x(r, j) = a * p.x0(r, j) + h * v_half;
            next.v(r, j) = v_half;
        }
    }
    const Tensor eps1 = guided_eps(model, next.x, labels, omega, s);
    const auto c = detail::coefficients(sched, s);
    const Tensor force = pf_ode_drift(next.x, eps1, c.f, c.g2, c.sigma);
    for (std::size_t i = 0; i < next.v.size(); ++i) next.v[i] += h * force[i];
    return next;
}

/// The one-step solver interface used by distillation: the increment
/// solve(z, t -> s) - z for a single condition and no guidance. Rows with
/// s == t yield a zero increment.
inline Tensor psi_solve(const Tensor& z, std::span<const double> t, std::span<const double> s, std::span<const int> labels, const NoiseModel& model, const Schedule& sched, SolverKind solver, double leapfrog_h = 0.5) {
    detail::check_rows(z, t.size(), "time", "psi_solve");
    detail::check_rows(z, s.size(), "target time", "psi_solve");
    detail::check_descending(t, s, "psi_solve", true);
    const std::vector<double> no_guidance(z.rows(), 0.0);
    // solvers require s < t; nudge empty intervals and zero them afterwards
    std::vector<double> s_eff(s.begin(), s.end());
    std::vector<bool> empty(z.rows(), false);
    for (std::size_t r = 0; r < z.rows(); ++r)
        if (s[r] == t[r]) {
            empty[r] = true;
            s_eff[r] = t[r] - 1e-9;
        }
    Tensor out;
    switch (solver) {
        case SolverKind::EulerOde: out = euler_ode_step(model, z, labels, no_guidance, t, s_eff, sched); break;
        case SolverKind::Ddim: {
            const X0Eps p = predict_x0_eps(model, z, labels, no_guidance, t, sched);
            out = ddim_step(z, p.x0, p.eps, t, s_eff, sched);
            break;
        }
        case SolverKind::Leapfrog: {
            const LeapfrogState st = LeapfrogState::start(z, std::vector<double>(t.begin(), t.end()));
            out = leapfrog_step(st, model, labels, no_guidance, s_eff, leapfrog_h, sched).x;
            break;
        }
        case SolverKind::EulerMaruyama: throw Error("psi_solve: euler_maruyama is stochastic and cannot serve as a one-step ODE solver");
    }
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t j = 0; j < z.cols(); ++j) out(r, j) = empty[r] ? 0.0 : out(r, j) - z(r, j);
    return out;
}

/// Draws z_T ~ N(0, I), integrates the reverse process over timestep_grid
/// (the last step lands on t_min) and decodes through the codec.
inline SampleBatch sample(const NoiseModel& model, const LatentCodec& codec, const SamplerConfig& cfg, std::size_t n, const Schedule& sched) {
    cfg.validate();
    if (n == 0) throw Error("sample: n must be >= 1");
    if (codec.latent_dim() != model.dim()) throw Error("sample: codec latent dim does not match model dim");
    const double t_min = cfg.t_min < 0.0 ? sched.t_min() : cfg.t_min;
    const std::vector<double> grid = sched.timestep_grid(cfg.n_steps, cfg.t_max, t_min);
    const std::vector<int> labels = condition_labels(cfg.condition, n, model.n_classes());
    const std::vector<double> omega(n, cfg.omega);

    Rng rng(derive_seed(cfg.seed, 0x73616d706c65));
    Tensor z = Tensor::randn(n, model.dim(), rng);
    LeapfrogState lf = LeapfrogState::start(z, std::vector<double>(n, grid[0]));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::vector<double> t(n, grid[i]);
        const std::vector<double> s(n, i + 1 < grid.size() ? grid[i + 1] : t_min);
        switch (cfg.solver) {
            case SolverKind::EulerOde: z = euler_ode_step(model, z, labels, omega, t, s, sched); break;
            case SolverKind::EulerMaruyama: {
                const Tensor noise = Tensor::randn(n, model.dim(), rng);
                z = euler_maruyama_step(model, z, labels, omega, t, s, noise, sched);
                break;
            }
            case SolverKind::Ddim: {
                const X0Eps p = predict_x0_eps(model, z, labels, omega, t, sched);
                z = ddim_step(z, p.x0, p.eps, t, s, sched);
                break;
            }
            case SolverKind::Leapfrog:
                lf = leapfrog_step(lf, model, labels, omega, s, cfg.leapfrog_h, sched);
                z = lf.x;
                break;
        }
        require_finite(z, "sample: step " + std::to_string(i));
    }
    SampleBatch out{decode(codec, z), labels};
    out.manifest["source"] = "sampler";
    out.manifest["solver"] = to_string(cfg.solver);
    out.manifest["steps"] = cfg.n_steps;
    out.manifest["omega"] = cfg.omega;
    out.manifest["condition"] = cfg.condition;
    out.manifest["seed"] = cfg.seed;
    out.manifest["leapfrog_h"] = cfg.leapfrog_h;
    out.manifest["t_max"] = cfg.t_max;
    out.manifest["t_min"] = t_min;
    out.manifest["schedule"] = {{"kind", to_string(sched.spec().kind)}, {"N", sched.N()}, {"beta_min", sched.spec().beta_min}, {"beta_max", sched.spec().beta_max}};
    out.manifest["n"] = n;
    return out;
}

}  // namespace llcm
