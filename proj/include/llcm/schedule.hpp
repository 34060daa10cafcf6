#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "llcm/tensor.hpp"

namespace llcm {

enum class ScheduleKind { VpLinear, VpCosine };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::VpLinear ? "vp_linear" : "vp_cosine"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "vp_linear") return ScheduleKind::VpLinear;
    if (s == "vp_cosine") return ScheduleKind::VpCosine;
    throw Error("unknown schedule kind '" + s + "' (valid: vp_linear, vp_cosine)");
}

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::VpLinear;
    std::size_t N = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    bool operator==(const ScheduleSpec&) const = default;
};

struct AlphaSigma {
    double alpha;
    double sigma;
};

struct DriftDiffusion {
    double f;   // d log alpha / dt
    double g2;  // d sigma^2 / dt - 2 f sigma^2
};

/// Variance-preserving noise schedule. Built from the DDPM discrete grid
/// (alpha_bar at t = i/N) and interpolated linearly in log alpha_bar, so
/// alpha(t) = sqrt(alpha_bar(t)) and sigma(t) = sqrt(1 - alpha_bar(t)).
class Schedule {
   public:
    explicit Schedule(ScheduleSpec spec = {}) : spec_(spec) {
        if (spec_.N < 2) throw Error("schedule: N must be at least 2");
        log_abar_.assign(spec_.N + 1, 0.0);
        const auto n = static_cast<double>(spec_.N);
        if (spec_.kind == ScheduleKind::VpLinear) {
            if (!(spec_.beta_min > 0.0 && spec_.beta_max < 1.0 && spec_.beta_min <= spec_.beta_max))
                throw Error("schedule: need 0 < beta_min <= beta_max < 1");
            for (std::size_t i = 1; i <= spec_.N; ++i) {
                const double beta = spec_.beta_min + (spec_.beta_max - spec_.beta_min) * static_cast<double>(i - 1) / (n - 1.0);
                log_abar_[i] = log_abar_[i - 1] + std::log1p(-beta);
            }
        } else {
            constexpr double s = 0.008;
            auto f = [&](double t) {
                const double c = std::cos((t + s) / (1.0 + s) * std::numbers::pi / 2.0);
                return c * c;
            };
            const double f0 = f(0.0);
            double prev = 1.0;
            for (std::size_t i = 1; i <= spec_.N; ++i) {
                const double abar = f(static_cast<double>(i) / n) / f0;
                const double beta = std::min(1.0 - abar / prev, 0.999);
                log_abar_[i] = log_abar_[i - 1] + std::log1p(-beta);
                prev = abar;
            }
        }
    }

    const ScheduleSpec& spec() const { return spec_; }
    std::size_t N() const { return spec_.N; }
    double t_min() const { return 1.0 / static_cast<double>(spec_.N); }

    /// Time of discrete grid index i (0..N).
    double grid_time(std::size_t i) const {
        if (i > spec_.N) throw Error("schedule: grid index " + std::to_string(i) + " > N = " + std::to_string(spec_.N));
        return static_cast<double>(i) / static_cast<double>(spec_.N);
    }

    double log_alpha_bar(double t) const {
        check_t(t, "alpha_sigma");
        const double u = t * static_cast<double>(spec_.N);
        std::size_t i = static_cast<std::size_t>(std::floor(u));
        if (i >= spec_.N) i = spec_.N - 1;
        const double frac = u - static_cast<double>(i);
        return log_abar_[i] + frac * (log_abar_[i + 1] - log_abar_[i]);
    }

    AlphaSigma alpha_sigma(double t) const {
        const double la = log_alpha_bar(t);
        return {std::exp(0.5 * la), std::sqrt(-std::expm1(la))};
    }

    /// SDE coefficients at t in (0, 1]. Inside a grid cell the log-linear
    /// interpolation gives a constant slope; at a knot the cell to the left is used.
    DriftDiffusion drift_diffusion(double t) const {
        if (!(t > 0.0 && t <= 1.0)) throw Error("drift_diffusion: t = " + std::to_string(t) + " outside (0, 1]");
        const auto n = static_cast<double>(spec_.N);
        auto i = static_cast<std::size_t>(std::ceil(t * n));
        i = std::clamp<std::size_t>(i, 1, spec_.N) - 1;
        const double slope = (log_abar_[i + 1] - log_abar_[i]) * n;  // d log alpha_bar / dt
        const double abar = std::exp(log_alpha_bar(t));
        const double f = 0.5 * slope;
        const double dsigma2 = -abar * slope;
        return {f, dsigma2 - 2.0 * f * (1.0 - abar)};
    }

    /// x_t = alpha(t) x0 + sigma(t) eps.
    Tensor perturb(const Tensor& x0, double t, const Tensor& eps) const {
        require_same_shape(x0, eps, "perturb");
        const auto [a, s] = alpha_sigma(t);
        return axpby(a, x0, s, eps);
    }

    /// Gaussian transition q(x_t | x_s) = N(ratio * x_s, variance I) for s <= t.
    struct Transition {
        double ratio;
        double variance;
    };

    Transition transition(double s, double t) const {
        if (s > t) throw Error("transition: requires s <= t");
        const auto as = alpha_sigma(s);
        const auto at = alpha_sigma(t);
        const double ratio = at.alpha / as.alpha;
        return {ratio, at.sigma * at.sigma - ratio * ratio * as.sigma * as.sigma};
    }

    /// n_steps evaluation times, descending uniformly from t_max toward t_min;
    /// a solver's final step lands on t_min.
    std::vector<double> timestep_grid(std::size_t n_steps, double t_max = 1.0, double t_min = -1.0) const {
        if (n_steps == 0) throw Error("timestep_grid: n_steps must be >= 1");
        if (t_min < 0.0) t_min = this->t_min();
        if (!(t_min > 0.0 && t_min < t_max && t_max <= 1.0)) throw Error("timestep_grid: need 0 < t_min < t_max <= 1");
        std::vector<double> g(n_steps);
        const double dt = (t_max - t_min) / static_cast<double>(n_steps);
        for (std::size_t i = 0; i < n_steps; ++i) g[i] = t_max - static_cast<double>(i) * dt;
        return g;
    }

   private:
    void check_t(double t, const char* op) const {
        if (!(t >= 0.0 && t <= 1.0)) throw Error(std::string(op) + ": t = " + std::to_string(t) + " outside [0, 1]");
    }

    ScheduleSpec spec_;
    std::vector<double> log_abar_;
};

}  // namespace llcm
