#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llcm/autodiff.hpp"
#include "llcm/mlp.hpp"
#include "llcm/noise_model.hpp"
#include "llcm/optim.hpp"
#include "llcm/samplers.hpp"
#include "llcm/schedule.hpp"
#include "llcm/toy_worlds.hpp"

namespace llcm {

// ---------------------------------------------------------------------------
// Teacher: epsilon-prediction denoising score matching.

struct TeacherConfig {
    std::size_t iterations = 3000;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    double cond_dropout = 0.1;
};

struct TrainResult {
    MlpParams params;
    std::vector<double> loss_trace;
};

/// One DSM loss + gradient evaluation on a prepared batch.
inline std::pair<double, MlpParams> dsm_loss_grad(const MlpParams& params, const Tensor& z_t, const Tensor& eps, std::span<const int> labels, std::span<const double> t) {
    Tape tape;
    const MlpVars vars = register_params(tape, params);
    const auto& c = params.config;
    const Var pred = mlp_forward(tape, params, vars, z_t, embed_conditions(labels, c.n_classes, c.c_embed_dim), embed_times(t, c.t_embed_dim));
    const Var loss = mean(row_sum(square(sub(pred, tape.constant(eps)))));
    tape.backward(loss);
    return {loss.value()[0], collect_grads(tape, params, vars)};
}

/// With `regress_onto` set, the sampled noise target is replaced by that
/// model's prediction at (z_t, c, t): a low-variance fit to an analytic teacher,
/// used as the student's starting weights when no trained teacher exists.
inline TrainResult train_teacher(const ToyWorld& world, const LatentCodec& codec, const Schedule& sched, const MlpConfig& nn, const TeacherConfig& cfg, std::uint64_t seed, const NoiseModel* regress_onto = nullptr) {
    if (nn.omega_embed_dim != 0) throw Error("train_teacher: teacher network takes no guidance input");
    if (nn.point_dim != codec.latent_dim()) throw Error("train_teacher: network dim does not match latent dim");
    if (nn.n_classes != world.n_classes) throw Error("train_teacher: network class count does not match world");
    TrainResult res{init_mlp(nn, seed, /*zero_final_layer=*/true), {}};
    AdamState opt = AdamState::fresh(res.params, AdamConfig{cfg.lr});
    Rng rng(derive_seed(seed, 0x7465616368));
    const double t_min = sched.t_min();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const SampleBatch data = sample_world(world, cfg.batch_size, derive_seed(seed, 1000 + it));
        const Tensor z0 = encode(codec, data.points);
        std::vector<int> labels = data.labels;
        std::vector<double> t(cfg.batch_size);
        Tensor eps = Tensor::randn(cfg.batch_size, nn.point_dim, rng);
        for (std::size_t r = 0; r < cfg.batch_size; ++r) {
            t[r] = rng.uniform(t_min, 1.0);
            if (rng.uniform() < cfg.cond_dropout) labels[r] = kNullToken;
        }
        Tensor z_t(z0.shape());
        for (std::size_t r = 0; r < cfg.batch_size; ++r) {
            const auto [a, s] = sched.alpha_sigma(t[r]);
            for (std::size_t j = 0; j < z0.cols(); ++j) z_t(r, j) = a * z0(r, j) + s * eps(r, j);
        }
        if (regress_onto) eps = regress_onto->predict(z_t, labels, t);
        auto [loss, grads] = dsm_loss_grad(res.params, z_t, eps, labels, t);
        if (!std::isfinite(loss)) throw NumericError("train_teacher: loss diverged at iteration " + std::to_string(it));
        res.loss_trace.push_back(loss);
        adam_step(res.params, grads, opt);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Consistency parameterization.

/// f(z, w, c, t) = c_skip(t) z + c_out(t) (z - sigma_t eps_hat(z, w, c, t)) / alpha_t.
struct ConsistencyHead {
    MlpParams params;  // network with a guidance input
    double sigma_data = 0.5;
    double time_scale = 10.0;
    double t_min = 1e-3;

    double c_skip(double t) const {
        const double u = (t - t_min) * time_scale;
        return sigma_data * sigma_data / (u * u + sigma_data * sigma_data);
    }
    double c_out(double t) const {
        const double u = (t - t_min) * time_scale;
        return u * u / (u * u + sigma_data * sigma_data);
    }
};

/// Recorded consistency function; `vars` must come from register_params(head.params).
inline Var consistency_forward(Tape& tape, const ConsistencyHead& head, const MlpVars& vars, const Tensor& z, std::span<const double> omega, std::span<const int> labels, std::span<const double> t, const Schedule& sched) {
    const auto& c = head.params.config;
    if (c.omega_embed_dim == 0) throw Error("consistency_forward: head network has no guidance input");
    const std::size_t b = z.rows();
    if (omega.size() != b || labels.size() != b || t.size() != b) throw Error("consistency_forward: per-row inputs do not match batch");
    std::vector<double> sig(b), inv_alpha(b), cs(b), co(b);
    for (std::size_t r = 0; r < b; ++r) {
        if (!(t[r] >= head.t_min - 1e-15 && t[r] <= 1.0)) throw Error("consistency_forward: t = " + std::to_string(t[r]) + " outside [t_min, 1]");
        const auto [a, s] = sched.alpha_sigma(t[r]);
        if (a < 1e-8) throw NumericError("consistency_forward: alpha(t) underflow");
        sig[r] = s;
        inv_alpha[r] = 1.0 / a;
        cs[r] = head.c_skip(t[r]);
        co[r] = head.c_out(t[r]);
    }
    const Tensor w_embed = embed_guidances(omega, c.omega_embed_dim);
    const Var eps = mlp_forward(tape, head.params, vars, z, embed_conditions(labels, c.n_classes, c.c_embed_dim), embed_times(t, c.t_embed_dim), &w_embed);
    const Var zc = tape.constant(z);
    const Var x0 = scale_rows(sub(zc, scale_rows(eps, sig)), inv_alpha);
    return add(scale_rows(zc, cs), scale_rows(x0, co));
}

inline Tensor consistency_forward(const ConsistencyHead& head, const Tensor& z, std::span<const double> omega, std::span<const int> labels, std::span<const double> t, const Schedule& sched) {
    Tape tape;
    const MlpVars vars = register_params(tape, head.params, false);
    Tensor out = consistency_forward(tape, head, vars, z, omega, labels, t, sched).value();
    require_finite(out, "consistency_forward");
    return out;
}

// ---------------------------------------------------------------------------
// Distillation.

enum class DistanceKind { SquaredL2, Huber };

inline std::string to_string(DistanceKind d) { return d == DistanceKind::SquaredL2 ? "squared_l2" : "huber"; }

inline DistanceKind distance_from_string(const std::string& s) {
    if (s == "squared_l2") return DistanceKind::SquaredL2;
    if (s == "huber") return DistanceKind::Huber;
    throw Error("unknown distance metric '" + s + "' (valid: squared_l2, huber)");
}

struct DistillConfig {
    std::size_t k = 20;
    std::size_t N = 1000;
    double omega_min = 0.0;
    double omega_max = 4.0;
    double ema_decay = 0.95;
    std::size_t iterations = 2000;
    std::size_t batch_size = 256;
    double lr = 1e-3;
    DistanceKind metric = DistanceKind::Huber;
    double huber_c = 0.03;
    SolverKind solver = SolverKind::Leapfrog;
    double leapfrog_h = 0.5;
    double sigma_data = 0.5;
    double time_scale = 10.0;
    std::size_t omega_embed_dim = 8;
    /// Adam steps fitting the student's starting network to an analytic
    /// teacher (which has no weights to copy); 0 starts from scratch.
    std::size_t warm_start_iterations = 2000;

    void validate() const {
        if (N < 2) throw Error("distill: N must be >= 2");
        if (k < 1 || k > N - 1) throw Error("distill: k = " + std::to_string(k) + " outside [1, N - 1] = [1, " + std::to_string(N - 1) + "]");
        if (!(omega_min >= 0.0 && omega_min <= omega_max)) throw Error("distill: need 0 <= omega_min <= omega_max");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw Error("distill: ema decay must lie in [0, 1)");
        if (batch_size == 0) throw Error("distill: batch size must be >= 1");
        if (solver == SolverKind::EulerMaruyama) throw Error("distill: euler_maruyama cannot serve as the one-step solver");
        if (omega_embed_dim == 0 || omega_embed_dim % 2) throw Error("distill: omega embedding dim must be even and positive");
    }
};

/// z + (1 + w) Psi(z, t -> s, c) - w Psi(z, t -> s, null). No gradient can
/// reach the teacher: it is evaluated outside any tape.
inline Tensor distill_target(const NoiseModel& teacher, const Tensor& z, std::span<const double> t_from, std::span<const double> t_to, std::span<const int> labels, std::span<const double> omega, const Schedule& sched, SolverKind solver, double leapfrog_h = 0.5) {
    detail::check_rows(z, omega.size(), "omega", "distill_target");
    const Tensor psi_c = psi_solve(z, t_from, t_to, labels, teacher, sched, solver, leapfrog_h);
    bool any = false;
    for (double w : omega) any = any || w != 0.0;
    std::vector<double> one(z.rows(), 1.0), a(z.rows());
    for (std::size_t r = 0; r < a.size(); ++r) a[r] = 1.0 + omega[r];
    Tensor out = row_axpby(one, z, a, psi_c);
    if (!any) return out;
    const std::vector<int> null_labels(z.rows(), kNullToken);
    const Tensor psi_u = psi_solve(z, t_from, t_to, null_labels, teacher, sched, solver, leapfrog_h);
    std::vector<double> b(z.rows());
    for (std::size_t r = 0; r < b.size(); ++r) b[r] = -omega[r];
    return row_axpby(one, out, b, psi_u);
}

/// Grid-index form: from t_{n+k} to t_n for each row.
inline Tensor distill_target_indexed(const NoiseModel& teacher, const Tensor& z, std::span<const std::size_t> n, std::size_t k, std::span<const int> labels, std::span<const double> omega, const Schedule& sched, SolverKind solver, double leapfrog_h = 0.5) {
    std::vector<double> from(n.size()), to(n.size());
    for (std::size_t r = 0; r < n.size(); ++r) {
        if (n[r] < 1 || n[r] + k > sched.N())
            throw Error("distill_target: index pair (" + std::to_string(n[r]) + ", " + std::to_string(n[r] + k) + ") outside [1, N = " + std::to_string(sched.N()) + "]");
        from[r] = sched.grid_time(n[r] + k);
        to[r] = sched.grid_time(n[r]);
    }
    return distill_target(teacher, z, from, to, labels, omega, sched, solver, leapfrog_h);
}

/// One training pair: shared-noise latents k grid intervals apart.
struct DistillPair {
    Tensor z0;       // clean latents
    Tensor eps;      // shared noise
    Tensor z_far;    // at t_{n+k}
    Tensor z_near;   // at t_n
    std::vector<int> labels;
    std::vector<std::size_t> n;
    std::vector<double> t_far, t_near, omega;
};

inline DistillPair make_distill_pair(const Tensor& z0, std::vector<int> labels, const Schedule& sched, const DistillConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.N != sched.N()) throw Error("distill: config N does not match schedule N");
    if (z0.rows() == 0) throw Error("distill: empty batch");
    const std::size_t b = z0.rows();
    DistillPair p{z0, Tensor::randn(b, z0.cols(), rng), Tensor(z0.shape()), Tensor(z0.shape()), std::move(labels), {}, {}, {}, {}};
    for (std::size_t r = 0; r < b; ++r) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(cfg.N - cfg.k)));
        p.n.push_back(n);
        p.t_near.push_back(sched.grid_time(n));
        p.t_far.push_back(sched.grid_time(n + cfg.k));
        p.omega.push_back(rng.uniform(cfg.omega_min, cfg.omega_max));
        const auto far = sched.alpha_sigma(p.t_far.back());
        const auto near = sched.alpha_sigma(p.t_near.back());
        for (std::size_t j = 0; j < z0.cols(); ++j) {
            p.z_far(r, j) = far.alpha * z0(r, j) + far.sigma * p.eps(r, j);
            p.z_near(r, j) = near.alpha * z0(r, j) + near.sigma * p.eps(r, j);
        }
    }
    return p;
}

struct LossGrad {
    double loss;
    MlpParams grads;
};

/// mean_r d(f_online(z_online, t_online), f_target(z_target, t_target)) with
/// the target branch evaluated off-tape (stop-gradient).
inline LossGrad consistency_loss(const ConsistencyHead& online, const ConsistencyHead& target, const Tensor& z_online, std::span<const double> t_online, const Tensor& z_target, std::span<const double> t_target, std::span<const int> labels, std::span<const double> omega, const Schedule& sched, DistanceKind metric = DistanceKind::SquaredL2, double huber_c = 0.03) {
    const Tensor f_target = consistency_forward(target, z_target, omega, labels, t_target, sched);
    Tape tape;
    const MlpVars vars = register_params(tape, online.params);
    const Var f = consistency_forward(tape, online, vars, z_online, omega, labels, t_online, sched);
    Var d = row_sum(square(sub(f, tape.constant(f_target))));
    if (metric == DistanceKind::Huber) d = add_scalar(sqrt(add_scalar(d, huber_c * huber_c)), -huber_c);
    const Var loss = mean(d);
    tape.backward(loss);
    return {loss.value()[0], collect_grads(tape, online.params, vars)};
}

/// Consistency-distillation loss for one batch of clean latents.
inline LossGrad cd_loss(const ConsistencyHead& head, const ConsistencyHead& ema_head, const NoiseModel& teacher, const DistillPair& pair, const Schedule& sched, const DistillConfig& cfg) {
    const Tensor z_hat = distill_target(teacher, pair.z_far, pair.t_far, pair.t_near, pair.labels, pair.omega, sched, cfg.solver, cfg.leapfrog_h);
    return consistency_loss(head, ema_head, pair.z_far, pair.t_far, z_hat, pair.t_near, pair.labels, pair.omega, sched, cfg.metric, cfg.huber_c);
}

struct LlcmResult {
    ConsistencyHead student;
    ConsistencyHead ema;
    std::vector<double> loss_trace;
};

using DistillObserver = std::function<void(std::size_t iteration, const DistillPair& pair, const ConsistencyHead& student, const ConsistencyHead& ema)>;

/// Fresh (or teacher-derived) consistency head for a config.
inline ConsistencyHead make_student(const MlpConfig& nn, const DistillConfig& cfg, const Schedule& sched, std::uint64_t seed, const MlpParams* teacher_params = nullptr) {
    ConsistencyHead h;
    h.sigma_data = cfg.sigma_data;
    h.time_scale = cfg.time_scale;
    h.t_min = sched.t_min();
    if (teacher_params) {
        h.params = with_guidance_input(*teacher_params, cfg.omega_embed_dim);
    } else {
        MlpConfig c = nn;
        c.omega_embed_dim = cfg.omega_embed_dim;
        h.params = init_mlp(c, derive_seed(seed, 0x73747564), /*zero_final_layer=*/true);
    }
    return h;
}

/// Starting point for distillation. A trained teacher's weights are copied
/// (plus a zero-weighted guidance input); an analytic teacher is first
/// distilled into a network of the student's shape by regressing onto its
/// noise predictions.
inline ConsistencyHead initial_student(const NoiseModel& teacher, const ToyWorld& world, const LatentCodec& codec, const Schedule& sched, const MlpConfig& nn, const DistillConfig& cfg, std::uint64_t seed) {
    if (const auto* mlp = dynamic_cast<const MlpNoiseModel*>(&teacher)) return make_student(nn, cfg, sched, seed, &mlp->params());
    if (cfg.warm_start_iterations == 0) return make_student(nn, cfg, sched, seed);
    TeacherConfig tc;
    tc.iterations = cfg.warm_start_iterations;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr;
    const TrainResult fit = train_teacher(world, codec, sched, nn, tc, derive_seed(seed, 0x7761726d), &teacher);
    return make_student(nn, cfg, sched, seed, &fit.params);
}

/// The distillation loop: sample (z, c), n and w, one shared eps, form both
/// noised latents, regress f_theta(z_{n+k}) on f_ema(z_hat_n), Adam step, EMA update.
inline LlcmResult train_llcm(const NoiseModel& teacher, ConsistencyHead student, const ToyWorld& world, const LatentCodec& codec, const Schedule& sched, const DistillConfig& cfg, std::uint64_t seed, const DistillObserver& observer = {}) {
    cfg.validate();
    if (cfg.N != sched.N()) throw Error("train_llcm: config N does not match schedule N");
    if (teacher.dim() != codec.latent_dim() || student.params.config.point_dim != codec.latent_dim())
        throw Error("train_llcm: teacher/student/codec dimensions differ");
    LlcmResult res{student, student, {}};
    EmaParams ema{res.student.params, cfg.ema_decay};
    AdamState opt = AdamState::fresh(res.student.params, AdamConfig{cfg.lr});
    Rng rng(derive_seed(seed, 0x6c6c636d));
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const SampleBatch data = sample_world(world, cfg.batch_size, derive_seed(seed, 5000 + it));
        const DistillPair pair = make_distill_pair(encode(codec, data.points), data.labels, sched, cfg, rng);
        res.ema.params = ema.shadow;
        auto [loss, grads] = cd_loss(res.student, res.ema, teacher, pair, sched, cfg);
        if (!std::isfinite(loss)) throw NumericError("train_llcm: loss is NaN at iteration " + std::to_string(it));
        res.loss_trace.push_back(loss);
        adam_step(res.student.params, grads, opt);
        ema_update(ema, res.student.params);
        res.ema.params = ema.shadow;
        if (observer) observer(it, pair, res.student, res.ema);
    }
    return res;
}

/// Few-step consistency sampling: one evaluation at t = t_max, then for each
/// later grid time re-noise the current estimate with fresh noise and re-evaluate.
inline SampleBatch consistency_sample(const ConsistencyHead& head, const LatentCodec& codec, std::size_t n_steps, double omega, int condition, std::size_t n, std::uint64_t seed, const Schedule& sched, double t_max = 1.0) {
    if (n_steps < 1) throw Error("consistency_sample: n_steps must be >= 1");
    if (n == 0) throw Error("consistency_sample: n must be >= 1");
    const auto& c = head.params.config;
    if (codec.latent_dim() != c.point_dim) throw Error("consistency_sample: codec latent dim does not match head");
    const std::vector<double> grid = sched.timestep_grid(n_steps, t_max, head.t_min);
    const std::vector<int> labels = condition_labels(condition, n, c.n_classes);
    const std::vector<double> w(n, omega);
    Rng rng(derive_seed(seed, 0x636f6e73));
    Tensor z = Tensor::randn(n, c.point_dim, rng);
    Tensor x0 = consistency_forward(head, z, w, labels, std::vector<double>(n, grid[0]), sched);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const Tensor eps = Tensor::randn(n, c.point_dim, rng);
        z = sched.perturb(x0, grid[i], eps);
        x0 = consistency_forward(head, z, w, labels, std::vector<double>(n, grid[i]), sched);
    }
    SampleBatch out{decode(codec, x0), labels};
    out.manifest["source"] = "consistency";
    out.manifest["solver"] = "consistency";
    out.manifest["steps"] = n_steps;
    out.manifest["omega"] = omega;
    out.manifest["condition"] = condition;
    out.manifest["seed"] = seed;
    out.manifest["t_max"] = t_max;
    out.manifest["n"] = n;
    return out;
}

/// Mean pairwise l2 gap of f along teacher PF-ODE trajectories (DDIM with
/// `fine_steps` steps, unguided), sampled at `probe_points` grid times.
inline double self_consistency_gap(const ConsistencyHead& head, const NoiseModel& teacher, const Schedule& sched, std::size_t n_traj, std::size_t fine_steps, std::size_t probe_points, std::uint64_t seed) {
    const auto& c = head.params.config;
    const std::vector<int> labels = condition_labels(kAllClasses, n_traj, c.n_classes);
    const std::vector<double> zero(n_traj, 0.0);
    const std::vector<double> grid = sched.timestep_grid(fine_steps, 1.0, head.t_min);
    const std::size_t stride = std::max<std::size_t>(1, fine_steps / probe_points);
    Rng rng(derive_seed(seed, 0x70726f6265));
    Tensor z = Tensor::randn(n_traj, c.point_dim, rng);
    std::vector<Tensor> outs;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::vector<double> t(n_traj, grid[i]);
        if (i % stride == 0) outs.push_back(consistency_forward(head, z, zero, labels, t, sched));
        const std::vector<double> s(n_traj, i + 1 < grid.size() ? grid[i + 1] : head.t_min);
        const X0Eps p = predict_x0_eps(teacher, z, labels, zero, t, sched);
        z = ddim_step(z, p.x0, p.eps, t, s, sched);
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < outs.size(); ++a)
        for (std::size_t b = a + 1; b < outs.size(); ++b)
            for (std::size_t r = 0; r < n_traj; ++r) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < c.point_dim; ++j) d2 += (outs[a](r, j) - outs[b](r, j)) * (outs[a](r, j) - outs[b](r, j));
                total += std::sqrt(d2);
                ++count;
            }
    return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace llcm
