#include <gtest/gtest.h>

#include <cmath>

#include "llcm/schedule.hpp"

using namespace llcm;

namespace {

// alpha_bar at grid index i straight from the DDPM recursion.
double grid_alpha_bar(std::size_t i, double beta_min = 1e-4, double beta_max = 0.02, std::size_t N = 1000) {
    double p = 1.0;
    for (std::size_t j = 0; j < i; ++j) p *= 1.0 - (beta_min + (beta_max - beta_min) * static_cast<double>(j) / static_cast<double>(N - 1));
    return p;
}

std::vector<Schedule> both_kinds() { return {Schedule{}, Schedule{ScheduleSpec{ScheduleKind::VpCosine}}}; }

}  // namespace

TEST(Schedule, BoundaryAtZero) {
    for (const auto& s : both_kinds()) {
        const auto [a, sig] = s.alpha_sigma(0.0);
        EXPECT_EQ(a, 1.0);
        EXPECT_EQ(sig, 0.0);
    }
}

TEST(Schedule, TerminalMatchesDiscreteProduct) {
    const Schedule s;
    const auto [a, sig] = s.alpha_sigma(1.0);
    EXPECT_NEAR(a, std::sqrt(grid_alpha_bar(1000)), 1e-12);
    EXPECT_LT(a, 0.05);
    EXPECT_NEAR(sig, 1.0, 1e-4);
}

TEST(Schedule, GridKnotsMatchDiscreteProduct) {
    const Schedule s;
    for (std::size_t i : {1u, 10u, 250u, 500u, 999u}) EXPECT_NEAR(s.alpha_sigma(s.grid_time(i)).alpha, std::sqrt(grid_alpha_bar(i)), 1e-12) << i;
}

TEST(Schedule, VariancePreserving) {
    for (const auto& s : both_kinds())
        for (int i = 0; i <= 2000; ++i) {
            const double t = i / 2000.0;
            const auto [a, sig] = s.alpha_sigma(t);
            EXPECT_NEAR(a * a + sig * sig, 1.0, 1e-12) << t;
        }
}

TEST(Schedule, MonotoneOnOpenInterval) {
    for (const auto& s : both_kinds()) {
        double pa = 1.0, ps = 0.0;
        for (int i = 1; i <= 1000; ++i) {
            const auto [a, sig] = s.alpha_sigma(i / 1000.0);
            EXPECT_LT(a, pa);
            EXPECT_GT(sig, ps);
            pa = a;
            ps = sig;
        }
    }
}

TEST(Schedule, OutOfRangeTimeRejected) {
    const Schedule s;
    EXPECT_THROW(s.alpha_sigma(-1e-12), Error);
    EXPECT_THROW(s.alpha_sigma(1.0 + 1e-12), Error);
    EXPECT_THROW(s.drift_diffusion(0.0), Error);
    EXPECT_THROW(s.drift_diffusion(1.5), Error);
}

TEST(Schedule, InvalidSpecRejected) {
    EXPECT_THROW(Schedule(ScheduleSpec{ScheduleKind::VpLinear, 1}), Error);
    EXPECT_THROW(Schedule(ScheduleSpec{ScheduleKind::VpLinear, 1000, 0.1, 0.01}), Error);
}

TEST(DriftDiffusion, MatchesFiniteDifferenceOfLogAlpha) {
    for (const auto& s : both_kinds()) {
        for (int i = 0; i < 997; ++i) {
            // interior of grid cells, where log alpha is smooth
            const double t = (i + 0.37) / 1000.0 + 1e-3;
            const double h = 1e-7;
            const double fd = (std::log(s.alpha_sigma(t + h).alpha) - std::log(s.alpha_sigma(t - h).alpha)) / (2.0 * h);
            const double f = s.drift_diffusion(t).f;
            EXPECT_NEAR(f, fd, 1e-6 * std::abs(fd)) << t;
        }
    }
}

TEST(DriftDiffusion, DiffusionMatchesFiniteDifferenceOfSigmaSquared) {
    const Schedule s;
    for (double t : {0.0123, 0.2567, 0.5011, 0.7777, 0.9955}) {
        const double h = 1e-7;
        auto s2 = [&](double u) { return std::pow(s.alpha_sigma(u).sigma, 2); };
        const double ds2 = (s2(t + h) - s2(t - h)) / (2.0 * h);
        const auto [f, g2] = s.drift_diffusion(t);
        EXPECT_NEAR(g2, ds2 - 2.0 * f * s2(t), 1e-6 * std::abs(g2));
    }
}

TEST(DriftDiffusion, VpIdentityAndSigns) {
    for (const auto& s : both_kinds())
        for (int i = 1; i <= 1000; ++i) {
            const auto [f, g2] = s.drift_diffusion(i / 1000.0);
            EXPECT_NEAR(g2, -2.0 * f, 1e-12 * std::abs(f));
            EXPECT_LT(f, 0.0);
            EXPECT_GE(g2, 0.0);
        }
}

TEST(Perturb, ZeroNoiseScalesSignal) {
    const Schedule s;
    const Tensor x0 = Tensor::matrix(2, 2, {1.0, -2.0, 0.5, 3.0});
    const double a = s.alpha_sigma(0.3).alpha;
    EXPECT_EQ(s.perturb(x0, 0.3, Tensor::zeros(2, 2)), a * x0);
}

TEST(Perturb, TimeZeroIsIdentity) {
    const Schedule s;
    Rng rng(1);
    const Tensor x0 = Tensor::randn(3, 2, rng), eps = Tensor::randn(3, 2, rng);
    EXPECT_EQ(s.perturb(x0, 0.0, eps), x0);
}

TEST(Perturb, ShapeMismatchRejected) {
    const Schedule s;
    EXPECT_THROW(s.perturb(Tensor::zeros(2, 2), 0.5, Tensor::zeros(2, 3)), Error);
}

TEST(Perturb, MonteCarloMoments) {
    const Schedule s;
    const std::size_t n = 100000;
    for (double t : {0.1, 0.5, 0.9}) {
        Rng rng(7);
        const Tensor x0 = Tensor::full(n, 1, 1.3);
        const Tensor x = s.perturb(x0, t, Tensor::randn(n, 1, rng));
        const auto [a, sig] = s.alpha_sigma(t);
        double m = 0.0, v = 0.0;
        for (double e : x.values()) m += e;
        m /= static_cast<double>(n);
        for (double e : x.values()) v += (e - m) * (e - m);
        v /= static_cast<double>(n - 1);
        EXPECT_NEAR(m, a * 1.3, 4.0 * sig / std::sqrt(static_cast<double>(n)));
        EXPECT_NEAR(v / (sig * sig), 1.0, 0.05);
    }
}

TEST(Transition, ComposesToDirectKernel) {
    for (const auto& s : both_kinds())
        for (auto [u, t] : {std::pair{0.1, 0.4}, {0.3, 0.31}, {0.02, 0.99}, {0.5, 0.5}}) {
            const auto tr = s.transition(u, t);
            const auto as = s.alpha_sigma(u), at = s.alpha_sigma(t);
            EXPECT_NEAR(tr.ratio * as.alpha, at.alpha, 1e-10);
            EXPECT_NEAR(tr.ratio * tr.ratio * as.sigma * as.sigma + tr.variance, at.sigma * at.sigma, 1e-10);
            EXPECT_GE(tr.variance, -1e-15);
        }
}

TEST(TimestepGrid, SingleStepIsTmax) {
    const Schedule s;
    EXPECT_EQ(s.timestep_grid(1), std::vector<double>{1.0});
}

TEST(TimestepGrid, TwoStepsHalfway) {
    const Schedule s;
    const auto g = s.timestep_grid(2);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0], 1.0);
    EXPECT_NEAR(g[1], 0.5 + 0.5 / 1000.0, 1e-15);
}

TEST(TimestepGrid, StrictlyDescendingAboveTmin) {
    const Schedule s;
    const auto g = s.timestep_grid(20);
    ASSERT_EQ(g.size(), 20u);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LT(g[i], g[i - 1]);
    EXPECT_GT(g.back(), s.t_min());
    // one more uniform step from the last entry lands on t_min
    EXPECT_NEAR(g.back() - (g[0] - g[1]), s.t_min(), 1e-12);
}

TEST(TimestepGrid, ZeroStepsRejected) {
    const Schedule s;
    EXPECT_THROW(s.timestep_grid(0), Error);
    EXPECT_THROW(s.timestep_grid(4, 0.5, 0.6), Error);
}
