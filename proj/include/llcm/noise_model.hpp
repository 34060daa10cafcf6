#pragma once

#include <functional>
#include <span>
#include <utility>

#include "llcm/mlp.hpp"
#include "llcm/schedule.hpp"
#include "llcm/toy_worlds.hpp"

namespace llcm {

/// A noise predictor eps(z, c, t), evaluated row-wise on a batch.
class NoiseModel {
   public:
    virtual ~NoiseModel() = default;
    virtual std::size_t dim() const = 0;
    virtual std::size_t n_classes() const = 0;
    virtual Tensor predict(const Tensor& z, std::span<const int> labels, std::span<const double> t) const = 0;
};

/// Closed-form optimal predictor of a mixture world (in the coordinates the
/// world is expressed in; use latent_world() for latent-space sampling).
class OracleNoiseModel final : public NoiseModel {
   public:
    OracleNoiseModel(ToyWorld world, Schedule schedule) : world_(std::move(world)), schedule_(std::move(schedule)) {
        detail::require_mixture(world_, "oracle noise model");
    }

    std::size_t dim() const override { return world_.dim; }
    std::size_t n_classes() const override { return world_.n_classes; }

    Tensor predict(const Tensor& z, std::span<const int> labels, std::span<const double> t) const override {
        return oracle_eps(world_, schedule_, z, labels, t);
    }

    const ToyWorld& world() const { return world_; }

   private:
    ToyWorld world_;
    Schedule schedule_;
};

/// Trained MLP predictor.
class MlpNoiseModel final : public NoiseModel {
   public:
    explicit MlpNoiseModel(MlpParams params) : params_(std::move(params)) {
        if (params_.config.omega_embed_dim != 0) throw Error("MlpNoiseModel: network expects a guidance input");
    }

    std::size_t dim() const override { return params_.config.point_dim; }
    std::size_t n_classes() const override { return params_.config.n_classes; }

    Tensor predict(const Tensor& z, std::span<const int> labels, std::span<const double> t) const override {
        const auto& c = params_.config;
        return mlp_forward(params_, z, embed_conditions(labels, c.n_classes, c.c_embed_dim), embed_times(t, c.t_embed_dim));
    }

    const MlpParams& params() const { return params_; }

   private:
    MlpParams params_;
};

/// Adapter for ad-hoc predictors (tests, stubs).
class FunctionNoiseModel final : public NoiseModel {
   public:
    using Fn = std::function<Tensor(const Tensor&, std::span<const int>, std::span<const double>)>;

    FunctionNoiseModel(std::size_t dim, std::size_t n_classes, Fn fn) : dim_(dim), n_classes_(n_classes), fn_(std::move(fn)) {}

    std::size_t dim() const override { return dim_; }
    std::size_t n_classes() const override { return n_classes_; }
    Tensor predict(const Tensor& z, std::span<const int> labels, std::span<const double> t) const override { return fn_(z, labels, t); }

   private:
    std::size_t dim_;
    std::size_t n_classes_;
    Fn fn_;
};

}  // namespace llcm
