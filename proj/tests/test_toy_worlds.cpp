#include <gtest/gtest.h>

#include <cmath>

#include "llcm/toy_worlds.hpp"

using namespace llcm;

namespace {

// Central differences of log q_t(x | c).
std::vector<double> fd_score(const ToyWorld& w, const Schedule& s, std::vector<double> x, int c, double t, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double o = x[j];
        x[j] = o + h;
        const double up = log_density(w, s, x, c, t);
        x[j] = o - h;
        const double dn = log_density(w, s, x, c, t);
        x[j] = o;
        g[j] = (up - dn) / (2.0 * h);
    }
    return g;
}

}  // namespace

TEST(World, GmmGridLayout) {
    const ToyWorld w = gmm_grid_world();
    ASSERT_EQ(w.n_classes, 4u);
    for (std::size_t c = 0; c < 4; ++c) {
        ASSERT_EQ(w.classes[c].size(), 2u);
        double total = 0.0;
        for (const auto& comp : w.classes[c]) {
            EXPECT_DOUBLE_EQ(comp.mean[0], static_cast<double>(c) - 1.5);
            EXPECT_DOUBLE_EQ(comp.variance, 0.0225);
            total += comp.weight;
        }
        EXPECT_DOUBLE_EQ(total, 1.0);
    }
}

TEST(World, UnknownNameRejected) {
    EXPECT_THROW(make_world("spiral"), Error);
    for (const char* name : {"gmm_grid", "two_moons", "checkerboard", "rings"}) EXPECT_NO_THROW(make_world(name));
}

TEST(World, InvalidTablesRejected) {
    EXPECT_THROW(gmm_world({{GaussianComponent{{0.0, 0.0}, 1.0, 0.7}}}), Error);
    EXPECT_THROW(gmm_world({{GaussianComponent{{0.0, 0.0}, 0.0, 1.0}}}), Error);
}

TEST(Sample, SingleStandardGaussianMean) {
    const ToyWorld w = single_gaussian_world({0.0, 0.0}, 1.0);
    const std::size_t n = 100000;
    const SampleBatch b = sample_world(w, n, 3);
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += b.points(r, j);
        EXPECT_LT(std::abs(m / static_cast<double>(n)), 4.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST(Sample, SameSeedSameBatch) {
    for (const char* name : {"gmm_grid", "two_moons", "checkerboard", "rings"}) {
        const ToyWorld w = make_world(name);
        const SampleBatch a = sample_world(w, 500, 11), b = sample_world(w, 500, 11);
        EXPECT_EQ(a.points, b.points) << name;
        EXPECT_EQ(a.labels, b.labels) << name;
        EXPECT_NE(a.points, sample_world(w, 500, 12).points) << name;
    }
}

TEST(Sample, ZeroPointsRejected) { EXPECT_THROW(sample_world(gmm_grid_world(), 0, 1), Error); }

TEST(Sample, LabelsRoughlyUniform) {
    const std::size_t n = 40000;
    const SampleBatch b = sample_world(gmm_grid_world(), n, 5);
    std::vector<std::size_t> counts(4, 0);
    for (int l : b.labels) ++counts[static_cast<std::size_t>(l)];
    for (auto c : counts) EXPECT_NEAR(static_cast<double>(c) / static_cast<double>(n), 0.25, 4.0 * std::sqrt(0.25 * 0.75 / static_cast<double>(n)));
}

TEST(Sample, FixedLabelHonored) {
    const SampleBatch b = sample_world(gmm_grid_world(), 200, 5, 2);
    for (std::size_t r = 0; r < b.size(); ++r) {
        EXPECT_EQ(b.labels[r], 2);
        EXPECT_NEAR(b.points(r, 0), 0.5, 1.0);
    }
    EXPECT_THROW(sample_world(gmm_grid_world(), 10, 5, 4), Error);
}

TEST(Score, SingleGaussianClosedForm) {
    const Schedule s;
    const std::vector<double> mu{0.7, -1.2};
    const double v0 = 0.3;
    const ToyWorld w = single_gaussian_world(mu, v0);
    Rng rng(4);
    const Tensor x = Tensor::randn(50, 2, rng);
    std::vector<int> labels(50, 0);
    std::vector<double> t(50);
    for (std::size_t r = 0; r < 50; ++r) t[r] = s.t_min() + (1.0 - s.t_min()) * static_cast<double>(r) / 49.0;
    const Tensor sc = analytic_score(w, s, x, labels, t);
    for (std::size_t r = 0; r < 50; ++r) {
        const auto [a, sg] = s.alpha_sigma(t[r]);
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(sc(r, j), -(x(r, j) - a * mu[j]) / (a * a * v0 + sg * sg), 1e-10 * (1.0 + std::abs(sc(r, j))));
    }
}

TEST(Score, NarrowComponentLimit) {
    const Schedule s;
    const std::vector<double> mu{0.2, 0.4};
    const ToyWorld w = single_gaussian_world(mu, 1e-14);
    const Tensor x = Tensor::matrix(1, 2, {0.25, 0.31});
    const double t = s.t_min();
    const std::vector<int> labels{0};
    const std::vector<double> ts{t};
    const Tensor sc = analytic_score(w, s, x, labels, ts);
    const auto [a, sg] = s.alpha_sigma(t);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(sc[j], -(x[j] - a * mu[j]) / (sg * sg), 1e-6 * std::abs(sc[j]));
}

TEST(Score, MatchesFiniteDifferencesOnMixture) {
    const Schedule s;
    const ToyWorld w = gmm_grid_world();
    Rng rng(8);
    for (int c : {0, 1, 2, 3, kNullToken})
        for (double t : {s.t_min(), 0.01, 0.1, 0.3, 0.7, 1.0})
            for (int k = 0; k < 5; ++k) {
                std::vector<double> x{rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)};
                const auto [a, sg] = s.alpha_sigma(t);
                // keep points where the density is not vanishingly small
                if (t < 0.05) {
                    const auto& m = w.classes[static_cast<std::size_t>(c == kNullToken ? 1 : c)][k % 2].mean;
                    x = {a * m[0] + 0.1 * sg * rng.normal() + 0.05 * rng.normal(), a * m[1] + 0.05 * rng.normal()};
                }
                const std::vector<int> labels{c};
                const std::vector<double> ts{t};
                const Tensor sc = analytic_score(w, s, Tensor::matrix(1, 2, x), labels, ts);
                const auto fd = fd_score(w, s, x, c, t, 1e-6 * std::max(sg, 0.05));
                const double num = std::hypot(sc[0] - fd[0], sc[1] - fd[1]);
                const double den = std::max(std::hypot(sc[0], sc[1]), 1e-3);
                EXPECT_LT(num / den, 1e-5) << "c=" << c << " t=" << t;
            }
}

TEST(Score, FiniteEverywhere) {
    const Schedule s;
    const ToyWorld w = gmm_grid_world();
    Rng rng(9);
    const Tensor x = Tensor::randn(200, 2, rng);
    for (double t : {s.t_min(), 0.5, 1.0}) {
        const std::vector<int> labels(200, kNullToken);
        const std::vector<double> ts(200, t);
        EXPECT_TRUE(analytic_score(w, s, 30.0 * x, labels, ts).all_finite());
    }
}

TEST(Score, NonMixtureWorldRejected) {
    const Schedule s;
    const std::vector<int> labels{0};
    const std::vector<double> ts{0.5};
    EXPECT_THROW(analytic_score(make_world("two_moons"), s, Tensor::zeros(1, 2), labels, ts), Error);
}

TEST(Score, OracleEpsBeatsBiasedPredictor) {
    // DSM loss of eps* is minimal: any perturbation of it scores worse on the same draws
    const Schedule s;
    const ToyWorld w = single_gaussian_world({0.5, -0.5}, 0.2);
    const std::size_t n = 10000;
    const SampleBatch b = sample_world(w, n, 1);
    Rng rng(2);
    const Tensor eps = Tensor::randn(n, 2, rng);
    std::vector<double> t(n);
    for (auto& v : t) v = rng.uniform(s.t_min(), 1.0);
    Tensor xt(b.points.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const auto [a, sg] = s.alpha_sigma(t[r]);
        for (std::size_t j = 0; j < 2; ++j) xt(r, j) = a * b.points(r, j) + sg * eps(r, j);
    }
    const Tensor star = oracle_eps(w, s, xt, b.labels, t);
    auto loss = [&](const Tensor& pred) {
        double l = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) l += (pred[i] - eps[i]) * (pred[i] - eps[i]);
        return l / static_cast<double>(n);
    };
    const double base = loss(star);
    EXPECT_LT(base, loss(1.05 * star));
    EXPECT_LT(base, loss(0.95 * star));
    EXPECT_LT(base, loss(star + Tensor::full(n, 2, 0.05)));
}

TEST(Codec, IdentityIsIdentity) {
    const LatentCodec c = LatentCodec::identity(2);
    Rng rng(1);
    const Tensor x = Tensor::randn(10, 2, rng);
    EXPECT_EQ(encode(c, x), x);
    EXPECT_EQ(decode(c, x), x);
}

TEST(Codec, RotationPreservesNormAboutShift) {
    const LatentCodec c = LatentCodec::rotation(2, 7);
    EXPECT_TRUE(c.is_orthogonal(1e-12));
    Rng rng(1);
    const Tensor x = Tensor::randn(50, 2, rng);
    const Tensor z = encode(c, x);
    for (std::size_t r = 0; r < 50; ++r) {
        const double nx = std::hypot(x(r, 0) - c.decode_b[0], x(r, 1) - c.decode_b[1]);
        EXPECT_NEAR(std::hypot(z(r, 0), z(r, 1)), nx, 1e-12);
    }
}

TEST(Codec, RoundTripExact) {
    for (std::size_t dim : {2u, 3u, 5u}) {
        const LatentCodec c = LatentCodec::rotation(dim, 99);
        Rng rng(3);
        const Tensor x = 3.0 * Tensor::randn(100, dim, rng);
        EXPECT_LT(max_abs_diff(decode(c, encode(c, x)), x), 1e-8);
    }
}

TEST(Codec, DimensionMismatchRejected) {
    const LatentCodec c = LatentCodec::rotation(2, 7);
    EXPECT_THROW(encode(c, Tensor::zeros(3, 3)), Error);
    EXPECT_THROW(decode(c, Tensor::zeros(3, 1)), Error);
}

TEST(Codec, LatentWorldMatchesEncodedSamples) {
    // encode(sample) and the pushed-forward mixture agree in the first two moments
    const ToyWorld w = gmm_grid_world();
    const LatentCodec c = LatentCodec::rotation(2, 7);
    const ToyWorld lw = latent_world(w, c);
    const std::size_t n = 50000;
    const Tensor z = encode(c, sample_world(w, n, 4).points);
    std::vector<double> mean(2, 0.0);
    for (const auto& cls : lw.classes)
        for (const auto& comp : cls)
            for (std::size_t j = 0; j < 2; ++j) mean[j] += comp.weight / 4.0 * comp.mean[j];
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += z(r, j);
        EXPECT_NEAR(m / static_cast<double>(n), mean[j], 4.0 * 1.2 / std::sqrt(static_cast<double>(n)));
    }
}
