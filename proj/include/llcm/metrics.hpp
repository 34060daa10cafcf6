#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "json.hpp"
#include "llcm/tensor.hpp"
#include "llcm/toy_worlds.hpp"

namespace llcm {

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased (n - 1)
};

/// Two-pass sample mean and covariance of the rows of x.
inline Moments sample_moments(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw Error("sample_moments: need at least 2 points");
    Moments m{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))};
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) m.mean(static_cast<Eigen::Index>(j)) += x(r, j);
    m.mean /= static_cast<double>(n);
    std::vector<double> c(d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) c[j] = x(r, j) - m.mean(static_cast<Eigen::Index>(j));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) m.cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += c[i] * c[j];
    }
    m.cov /= static_cast<double>(n - 1);
    m.cov.triangularView<Eigen::StrictlyLower>() = m.cov.transpose();
    return m;
}

/// PSD square root by symmetric eigendecomposition (negative eigenvalues clamped).
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}) between Gaussians.
/// Tr (S_a S_b)^{1/2} = Tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}.
inline double frechet_distance(const Moments& a, const Moments& b) {
    const Eigen::MatrixXd sa = psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = sa * b.cov * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double fd = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    return std::max(fd, 0.0);
}

inline double frechet_distance(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw Error("frechet_distance: dimension mismatch " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    if (a.rows() < a.cols() + 1 || b.rows() < b.cols() + 1)
        throw Error("frechet_distance: need at least dim + 1 = " + std::to_string(a.cols() + 1) + " points per batch (degenerate covariance)");
    // symmetrize: the square-root route is not exactly symmetric in floating point
    const Moments ma = sample_moments(a), mb = sample_moments(b);
    return 0.5 * (frechet_distance(ma, mb) + frechet_distance(mb, ma));
}

inline double frechet_distance(const SampleBatch& a, const SampleBatch& b) { return frechet_distance(a.points, b.points); }

namespace detail {
inline double sq_dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
    return s;
}
}  // namespace detail

/// Median pairwise distance over the first `cap` points of each batch.
inline double median_bandwidth(const Tensor& a, const Tensor& b, std::size_t cap = 500) {
    std::vector<std::span<const double>> pts;
    for (std::size_t r = 0; r < std::min(cap, a.rows()); ++r) pts.push_back(a.row(r));
    for (std::size_t r = 0; r < std::min(cap, b.rows()); ++r) pts.push_back(b.row(r));
    std::vector<double> d;
    d.reserve(pts.size() * (pts.size() - 1) / 2);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(std::sqrt(detail::sq_dist(pts[i], pts[j])));
    if (d.empty()) throw Error("median_bandwidth: not enough points");
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double h = *mid;
    if (d.size() % 2 == 0) h = 0.5 * (h + *std::max_element(d.begin(), mid));
    if (!(h > 0.0)) throw Error("median_bandwidth: all points coincide");
    return h;
}

/// Unbiased Gaussian-kernel MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 h^2)).
/// bandwidth <= 0 selects the median heuristic.
inline double mmd(const Tensor& a, const Tensor& b, double bandwidth = -1.0) {
    if (a.cols() != b.cols()) throw Error("mmd: dimension mismatch");
    if (a.rows() < 2 || b.rows() < 2) throw Error("mmd: each batch needs at least 2 points");
    const double h = bandwidth > 0.0 ? bandwidth : median_bandwidth(a, b);
    const double inv = 1.0 / (2.0 * h * h);
    auto within = [&](const Tensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = i + 1; j < x.rows(); ++j) s += std::exp(-detail::sq_dist(x.row(i), x.row(j)) * inv);
        const auto n = static_cast<double>(x.rows());
        return 2.0 * s / (n * (n - 1.0));
    };
    double cross = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < b.rows(); ++j) row += std::exp(-detail::sq_dist(a.row(i), b.row(j)) * inv);
        cross += row;
    }
    cross /= static_cast<double>(a.rows()) * static_cast<double>(b.rows());
    return within(a) + within(b) - 2.0 * cross;
}

struct MomentGaps {
    std::vector<double> mean_gap;  // mean_a - mean_b per dimension
    std::vector<double> cov_gap;   // cov_a - cov_b, row-major d x d
    std::size_t n_a = 0, n_b = 0;
};

inline MomentGaps moment_report(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw Error("moment_report: dimension mismatch");
    const Moments ma = sample_moments(a), mb = sample_moments(b);
    MomentGaps g;
    const auto d = static_cast<Eigen::Index>(a.cols());
    for (Eigen::Index i = 0; i < d; ++i) g.mean_gap.push_back(ma.mean(i) - mb.mean(i));
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) g.cov_gap.push_back(ma.cov(i, j) - mb.cov(i, j));
    g.n_a = a.rows();
    g.n_b = b.rows();
    return g;
}

struct MetricReport {
    double frechet_distance = 0.0;
    double mmd2 = 0.0;
    std::size_t n_a = 0, n_b = 0, dims = 0;
    double bandwidth = 0.0;
    MomentGaps moments;

    /// Fixed-schema JSON (frechet_distance, mmd2, n_a, n_b, dims, bandwidth).
    nlohmann::ordered_json to_json() const {
        return {{"frechet_distance", frechet_distance}, {"mmd2", mmd2}, {"n_a", n_a}, {"n_b", n_b}, {"dims", dims}, {"bandwidth", bandwidth}};
    }
};

/// Full report; MMD uses at most `mmd_cap` leading points of each batch.
inline MetricReport evaluate(const Tensor& a, const Tensor& b, double bandwidth = -1.0, std::size_t mmd_cap = 5000) {
    MetricReport r;
    r.frechet_distance = frechet_distance(a, b);
    const Tensor sa = slice_rows(a, 0, std::min(mmd_cap, a.rows()));
    const Tensor sb = slice_rows(b, 0, std::min(mmd_cap, b.rows()));
    r.bandwidth = bandwidth > 0.0 ? bandwidth : median_bandwidth(sa, sb);
    r.mmd2 = mmd(sa, sb, r.bandwidth);
    r.n_a = a.rows();
    r.n_b = b.rows();
    r.dims = a.cols();
    r.moments = moment_report(a, b);
    return r;
}

}  // namespace llcm
