#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "llcm/mlp.hpp"
#include "llcm/rng.hpp"
#include "llcm/schedule.hpp"
#include "llcm/tensor.hpp"

namespace llcm {

/// A set of labeled points plus provenance.
struct SampleBatch {
    Tensor points;  // (n, dim)
    std::vector<int> labels;
    nlohmann::ordered_json manifest = nlohmann::ordered_json::object();

    std::size_t size() const { return points.rows(); }
    std::size_t dim() const { return points.cols(); }
};

enum class WorldKind { GmmGrid, TwoMoons, Checkerboard, Rings };

struct GaussianComponent {
    std::vector<double> mean;
    double variance;  // isotropic
    double weight;    // within its class
};

struct ToyWorld {
    WorldKind kind = WorldKind::GmmGrid;
    std::string name = "gmm_grid";
    std::size_t dim = 2;
    std::size_t n_classes = 4;
    /// Mixture components per class (mixture worlds only).
    std::vector<std::vector<GaussianComponent>> classes;
    /// Jitter for the non-mixture shapes.
    double noise = 0.05;

    bool is_mixture() const { return kind == WorldKind::GmmGrid; }
};

inline void validate_world(const ToyWorld& w) {
    if (w.dim == 0 || w.n_classes == 0) throw Error("world '" + w.name + "': dim and class count must be positive");
    if (!w.is_mixture()) return;
    if (w.classes.size() != w.n_classes) throw Error("world '" + w.name + "': component table does not match class count");
    for (std::size_t c = 0; c < w.classes.size(); ++c) {
        if (w.classes[c].empty()) throw Error("world '" + w.name + "': class " + std::to_string(c) + " has no components");
        double total = 0.0;
        for (const auto& comp : w.classes[c]) {
            if (comp.mean.size() != w.dim) throw Error("world '" + w.name + "': component mean has wrong dimension");
            if (!(comp.variance > 0.0)) throw Error("world '" + w.name + "': component variance must be > 0");
            if (!(comp.weight >= 0.0)) throw Error("world '" + w.name + "': negative mixture weight");
            total += comp.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) throw Error("world '" + w.name + "': class " + std::to_string(c) + " weights sum to " + std::to_string(total));
    }
}

/// Mixture world from an explicit component table.
inline ToyWorld gmm_world(std::vector<std::vector<GaussianComponent>> classes, std::string name = "gmm_grid") {
    ToyWorld w;
    w.kind = WorldKind::GmmGrid;
    w.name = std::move(name);
    w.n_classes = classes.size();
    w.dim = classes.empty() || classes[0].empty() ? 0 : classes[0][0].mean.size();
    w.classes = std::move(classes);
    validate_world(w);
    return w;
}

inline ToyWorld single_gaussian_world(std::vector<double> mean, double variance) {
    return gmm_world({{GaussianComponent{std::move(mean), variance, 1.0}}}, "gmm_grid");
}

/// Default benchmark: 4 classes x 2 components in 2-D on a unit grid, std 0.15.
/// Class c owns the column x = c - 1.5 at y = -0.5 and y = +0.5.
inline ToyWorld gmm_grid_world(double component_std = 0.15) {
    std::vector<std::vector<GaussianComponent>> classes(4);
    for (int c = 0; c < 4; ++c)
        for (double y : {-0.5, 0.5}) classes[static_cast<std::size_t>(c)].push_back({{c - 1.5, y}, component_std * component_std, 0.5});
    return gmm_world(std::move(classes));
}

inline ToyWorld make_world(const std::string& name) {
    if (name == "gmm_grid") return gmm_grid_world();
    ToyWorld w;
    w.name = name;
    w.dim = 2;
    if (name == "two_moons") {
        w.kind = WorldKind::TwoMoons;
        w.n_classes = 2;
    } else if (name == "checkerboard") {
        w.kind = WorldKind::Checkerboard;
        w.n_classes = 2;
    } else if (name == "rings") {
        w.kind = WorldKind::Rings;
        w.n_classes = 2;
    } else {
        throw Error("unknown world '" + name + "' (valid: gmm_grid, two_moons, checkerboard, rings)");
    }
    return w;
}

namespace detail {
inline void draw_point(const ToyWorld& w, int c, Rng& rng, std::span<double> out) {
    switch (w.kind) {
        case WorldKind::GmmGrid: {
            const auto& comps = w.classes[static_cast<std::size_t>(c)];
            const double u = rng.uniform();
            std::size_t k = 0;
            double acc = comps[0].weight;
            while (u >= acc && k + 1 < comps.size()) acc += comps[++k].weight;
            const double sd = std::sqrt(comps[k].variance);
            for (std::size_t j = 0; j < w.dim; ++j) out[j] = comps[k].mean[j] + sd * rng.normal();
            return;
        }
        case WorldKind::TwoMoons: {
            const double th = std::numbers::pi * rng.uniform();
            if (c == 0) {
                out[0] = std::cos(th) - 0.5;
                out[1] = std::sin(th) - 0.25;
            } else {
                out[0] = 0.5 - std::cos(th);
                out[1] = 0.25 - std::sin(th);
            }
            out[0] += w.noise * rng.normal();
            out[1] += w.noise * rng.normal();
            return;
        }
        case WorldKind::Checkerboard: {
            // 4x4 board on [-2, 2]^2; class = parity of the square
            const auto pick = rng.uniform_int(0, 7);
            const auto row = pick / 2;
            const auto col = 2 * (pick % 2) + ((row + c) % 2);
            out[0] = -2.0 + static_cast<double>(col) + rng.uniform();
            out[1] = -2.0 + static_cast<double>(row) + rng.uniform();
            return;
        }
        case WorldKind::Rings: {
            const double r = 0.5 * (c + 1) + w.noise * rng.normal();
            const double th = 2.0 * std::numbers::pi * rng.uniform();
            out[0] = r * std::cos(th);
            out[1] = r * std::sin(th);
            return;
        }
    }
}
}  // namespace detail

/// n labeled points; labels uniform over classes unless `label` is given.
inline SampleBatch sample_world(const ToyWorld& w, std::size_t n, std::uint64_t seed, int label = kNullToken) {
    validate_world(w);
    if (n == 0) throw Error("sample_world: n must be >= 1");
    if (label != kNullToken && (label < 0 || static_cast<std::size_t>(label) >= w.n_classes))
        throw Error("sample_world: class " + std::to_string(label) + " out of range");
    Rng rng(derive_seed(seed, 0x776f726c64));
    SampleBatch b{Tensor::zeros(n, w.dim), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = label != kNullToken ? label : static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(w.n_classes) - 1));
        b.labels[i] = c;
        detail::draw_point(w, c, rng, b.points.row(i));
    }
    b.manifest["source"] = "world";
    b.manifest["world"] = w.name;
    b.manifest["n"] = n;
    b.manifest["seed"] = seed;
    b.manifest["label"] = label;
    return b;
}

namespace detail {
/// Components (with effective weights) of the class-c marginal; null = all classes.
inline std::vector<GaussianComponent> class_components(const ToyWorld& w, int c) {
    if (c == kNullToken) {
        std::vector<GaussianComponent> all;
        for (const auto& cls : w.classes)
            for (auto comp : cls) {
                comp.weight /= static_cast<double>(w.n_classes);
                all.push_back(std::move(comp));
            }
        return all;
    }
    if (c < 0 || static_cast<std::size_t>(c) >= w.n_classes) throw Error("analytic_score: class " + std::to_string(c) + " out of range");
    return w.classes[static_cast<std::size_t>(c)];
}

inline void require_mixture(const ToyWorld& w, const char* op) {
    if (!w.is_mixture()) throw Error(std::string(op) + ": world '" + w.name + "' has no closed-form density");
}
}  // namespace detail

/// log q_t(x | c) for a mixture world, single point.
inline double log_density(const ToyWorld& w, const Schedule& s, std::span<const double> x, int c, double t) {
    detail::require_mixture(w, "log_density");
    const auto [a, sg] = s.alpha_sigma(t);
    const auto comps = detail::class_components(w, c);
    std::vector<double> lw(comps.size());
    double mx = -INFINITY;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const double v = a * a * comps[k].variance + sg * sg;
        double d2 = 0.0;
        for (std::size_t j = 0; j < w.dim; ++j) d2 += (x[j] - a * comps[k].mean[j]) * (x[j] - a * comps[k].mean[j]);
        lw[k] = std::log(comps[k].weight) - 0.5 * static_cast<double>(w.dim) * std::log(2.0 * std::numbers::pi * v) - 0.5 * d2 / v;
        mx = std::max(mx, lw[k]);
    }
    double acc = 0.0;
    for (double l : lw) acc += std::exp(l - mx);
    return mx + std::log(acc);
}

/// Exact score of the time-t marginal of class c (per row), for mixture worlds.
inline Tensor analytic_score(const ToyWorld& w, const Schedule& s, const Tensor& x, std::span<const int> labels, std::span<const double> t) {
    detail::require_mixture(w, "analytic_score");
    if (x.cols() != w.dim) throw Error("analytic_score: point dim " + std::to_string(x.cols()) + " != world dim " + std::to_string(w.dim));
    if (labels.size() != x.rows() || t.size() != x.rows()) throw Error("analytic_score: labels/times do not match batch");
    Tensor out(x.shape());
    std::vector<GaussianComponent> comps;
    int cached = -2;
    std::vector<double> lw, v;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (labels[r] != cached) {
            comps = detail::class_components(w, labels[r]);
            cached = labels[r];
        }
        const auto [a, sg] = s.alpha_sigma(t[r]);
        const auto xr = x.row(r);
        lw.assign(comps.size(), 0.0);
        v.assign(comps.size(), 0.0);
        double mx = -INFINITY;
        for (std::size_t k = 0; k < comps.size(); ++k) {
            v[k] = a * a * comps[k].variance + sg * sg;
            double d2 = 0.0;
            for (std::size_t j = 0; j < w.dim; ++j) d2 += (xr[j] - a * comps[k].mean[j]) * (xr[j] - a * comps[k].mean[j]);
            lw[k] = std::log(comps[k].weight) - 0.5 * static_cast<double>(w.dim) * std::log(v[k]) - 0.5 * d2 / v[k];
            mx = std::max(mx, lw[k]);
        }
        double z = 0.0;
        for (auto& l : lw) z += (l = std::exp(l - mx));
        auto o = out.row(r);
        for (std::size_t k = 0; k < comps.size(); ++k) {
            const double resp = lw[k] / z;
            for (std::size_t j = 0; j < w.dim; ++j) o[j] -= resp * (xr[j] - a * comps[k].mean[j]) / v[k];
        }
    }
    return out;
}

/// Oracle noise prediction eps*(x, c, t) = -sigma_t * score.
inline Tensor oracle_eps(const ToyWorld& w, const Schedule& s, const Tensor& x, std::span<const int> labels, std::span<const double> t) {
    Tensor sc = analytic_score(w, s, x, labels, t);
    for (std::size_t r = 0; r < sc.rows(); ++r) {
        const double sg = s.alpha_sigma(t[r]).sigma;
        for (auto& v : sc.row(r)) v *= -sg;
    }
    return sc;
}

/// Affine encoder/decoder pair standing in for a learned latent space.
/// encode: z = E x + e_b, decode: x = D z + d_b.
struct LatentCodec {
    Tensor encode_w;  // (latent, data)
    std::vector<double> encode_b;
    Tensor decode_w;  // (data, latent)
    std::vector<double> decode_b;
    std::string kind = "identity";
    std::uint64_t seed = 0;

    std::size_t data_dim() const { return encode_w.cols(); }
    std::size_t latent_dim() const { return encode_w.rows(); }

    static LatentCodec identity(std::size_t dim) {
        LatentCodec c;
        c.encode_w = Tensor::zeros(dim, dim);
        for (std::size_t i = 0; i < dim; ++i) c.encode_w(i, i) = 1.0;
        c.decode_w = c.encode_w;
        c.encode_b.assign(dim, 0.0);
        c.decode_b.assign(dim, 0.0);
        return c;
    }

    /// Seeded random rotation R and shift b: z = R (x - b), x = R^T z + b.
    static LatentCodec rotation(std::size_t dim, std::uint64_t seed, double shift_scale = 0.5) {
        Rng rng(derive_seed(seed, 0x636f646563));
        // Gram-Schmidt on a Gaussian matrix, twice for orthogonality to machine precision
        Tensor r = Tensor::randn(dim, dim, rng);
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t i = 0; i < dim; ++i) {
                auto ri = r.row(i);
                for (std::size_t k = 0; k < i; ++k) {
                    const auto rk = r.row(k);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < dim; ++j) dot += ri[j] * rk[j];
                    for (std::size_t j = 0; j < dim; ++j) ri[j] -= dot * rk[j];
                }
                double nrm = 0.0;
                for (double v : ri) nrm += v * v;
                nrm = std::sqrt(nrm);
                for (auto& v : ri) v /= nrm;
            }
        std::vector<double> b(dim);
        for (auto& v : b) v = shift_scale * rng.normal();
        LatentCodec c;
        c.kind = "rotation";
        c.seed = seed;
        c.encode_w = r;
        c.decode_w = Tensor::zeros(dim, dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) c.decode_w(j, i) = r(i, j);
        c.encode_b.assign(dim, 0.0);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) c.encode_b[i] -= r(i, j) * b[j];
        c.decode_b = b;
        return c;
    }

    bool is_orthogonal(double tol = 1e-10) const {
        if (latent_dim() != data_dim()) return false;
        const Tensor g = matmul_bt(encode_w, encode_w);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                if (std::abs(g(i, j) - (i == j ? 1.0 : 0.0)) > tol) return false;
        return true;
    }
};

namespace detail {
inline Tensor affine_rows(const Tensor& x, const Tensor& w, const std::vector<double>& b, const char* op) {
    if (x.cols() != w.cols()) throw Error(std::string(op) + ": input dim " + std::to_string(x.cols()) + " != codec dim " + std::to_string(w.cols()));
    Tensor out = matmul_bt(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) += b[j];
    return out;
}
}  // namespace detail

inline Tensor encode(const LatentCodec& codec, const Tensor& x) { return detail::affine_rows(x, codec.encode_w, codec.encode_b, "encode"); }
inline Tensor decode(const LatentCodec& codec, const Tensor& z) { return detail::affine_rows(z, codec.decode_w, codec.decode_b, "decode"); }

/// The mixture world expressed in latent coordinates (requires an orthogonal codec,
/// which keeps isotropic components isotropic).
inline ToyWorld latent_world(const ToyWorld& w, const LatentCodec& codec) {
    detail::require_mixture(w, "latent_world");
    if (!codec.is_orthogonal()) throw Error("latent_world: codec is not orthogonal");
    if (codec.data_dim() != w.dim) throw Error("latent_world: codec dim does not match world");
    ToyWorld lw = w;
    for (auto& cls : lw.classes)
        for (auto& comp : cls) {
            const Tensor m = encode(codec, Tensor::matrix(1, w.dim, comp.mean));
            comp.mean.assign(m.values().begin(), m.values().end());
        }
    return lw;
}

}  // namespace llcm
