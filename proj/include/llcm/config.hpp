#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "llcm/distill.hpp"
#include "llcm/io.hpp"
#include "llcm/samplers.hpp"

namespace llcm {

/// Everything a pipeline run needs; persisted fully resolved.
struct RunConfig {
    int format_version = kFormatVersion;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    std::string world = "gmm_grid";
    std::string codec = "rotation";
    std::uint64_t codec_seed = 7;
    ScheduleSpec schedule;
    MlpConfig nn;
    /// oracle | trained
    std::string teacher_kind = "oracle";
    TeacherConfig teacher;
    DistillConfig distill;
    std::vector<SamplerConfig> samplers{SamplerConfig{}};
    std::size_t eval_samples = 10000;

    ToyWorld make_world() const { return llcm::make_world(world); }

    LatentCodec make_codec() const {
        const ToyWorld w = make_world();
        if (codec == "identity") return LatentCodec::identity(w.dim);
        if (codec == "rotation") return LatentCodec::rotation(w.dim, codec_seed);
        throw Error("config: unknown codec '" + codec + "' (valid: identity, rotation)");
    }

    /// Fills derived fields and checks cross-field constraints.
    void resolve() {
        if (format_version != kFormatVersion) throw Error("config: unsupported format_version " + std::to_string(format_version));
        const ToyWorld w = make_world();
        nn.point_dim = w.dim;
        nn.n_classes = w.n_classes;
        distill.N = schedule.N;
        if (teacher_kind != "oracle" && teacher_kind != "trained") throw Error("config: teacher_kind must be 'oracle' or 'trained'");
        if (teacher_kind == "oracle" && !w.is_mixture()) throw Error("config: oracle teacher needs a mixture world (gmm_grid)");
        distill.validate();
        for (const auto& s : samplers) s.validate();
        (void)make_codec();
        Schedule check(schedule);
    }
};

inline ojson condition_to_json(int c) {
    if (c == kNullToken) return "null";
    if (c == kAllClasses) return "all";
    return c;
}

inline int condition_from_json(const ojson& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "null") return kNullToken;
        if (s == "all") return kAllClasses;
        throw Error("config: condition must be a class id, \"null\" or \"all\"");
    }
    return j.get<int>();
}

inline ojson to_json(const SamplerConfig& s) {
    return {{"solver", to_string(s.solver)}, {"n_steps", s.n_steps}, {"omega", s.omega}, {"condition", condition_to_json(s.condition)}, {"seed", s.seed}, {"leapfrog_h", s.leapfrog_h}, {"t_max", s.t_max}, {"t_min", s.t_min}};
}

inline SamplerConfig sampler_from_json(const ojson& j) {
    SamplerConfig s;
    s.solver = solver_from_string(j.value("solver", to_string(s.solver)));
    s.n_steps = j.value("n_steps", s.n_steps);
    s.omega = j.value("omega", s.omega);
    if (j.contains("condition")) s.condition = condition_from_json(j.at("condition"));
    s.seed = j.value("seed", s.seed);
    s.leapfrog_h = j.value("leapfrog_h", s.leapfrog_h);
    s.t_max = j.value("t_max", s.t_max);
    s.t_min = j.value("t_min", s.t_min);
    return s;
}

inline ojson to_json(const RunConfig& c) {
    ojson samplers = ojson::array();
    for (const auto& s : c.samplers) samplers.push_back(to_json(s));
    const auto& d = c.distill;
    return {
        {"format_version", c.format_version},
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"world", c.world},
        {"codec", c.codec},
        {"codec_seed", c.codec_seed},
        {"schedule", to_json(c.schedule)},
        {"nn", to_json(c.nn)},
        {"teacher_kind", c.teacher_kind},
        {"teacher", {{"iterations", c.teacher.iterations}, {"batch_size", c.teacher.batch_size}, {"lr", c.teacher.lr}, {"cond_dropout", c.teacher.cond_dropout}}},
        {"distill",
         {{"k", d.k},
          {"N", d.N},
          {"omega_min", d.omega_min},
          {"omega_max", d.omega_max},
          {"ema_decay", d.ema_decay},
          {"iterations", d.iterations},
          {"batch_size", d.batch_size},
          {"lr", d.lr},
          {"metric", to_string(d.metric)},
          {"huber_c", d.huber_c},
          {"solver", to_string(d.solver)},
          {"leapfrog_h", d.leapfrog_h},
          {"sigma_data", d.sigma_data},
          {"time_scale", d.time_scale},
          {"omega_embed_dim", d.omega_embed_dim},
          {"warm_start_iterations", d.warm_start_iterations}}},
        {"samplers", samplers},
        {"eval_samples", c.eval_samples},
    };
}

/// Missing keys take defaults; wrong types raise.
inline RunConfig run_config_from_json(const ojson& j) {
    RunConfig c;
    try {
        c.format_version = j.value("format_version", c.format_version);
        c.seed = j.value("seed", c.seed);
        c.out_dir = j.value("out_dir", c.out_dir);
        c.world = j.value("world", c.world);
        c.codec = j.value("codec", c.codec);
        c.codec_seed = j.value("codec_seed", c.codec_seed);
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            c.schedule.kind = schedule_kind_from_string(s.value("kind", to_string(c.schedule.kind)));
            c.schedule.N = s.value("N", c.schedule.N);
            c.schedule.beta_min = s.value("beta_min", c.schedule.beta_min);
            c.schedule.beta_max = s.value("beta_max", c.schedule.beta_max);
        }
        if (j.contains("nn")) {
            const auto& n = j.at("nn");
            c.nn.c_embed_dim = n.value("c_embed_dim", c.nn.c_embed_dim);
            c.nn.t_embed_dim = n.value("t_embed_dim", c.nn.t_embed_dim);
            c.nn.hidden = n.value("hidden", c.nn.hidden);
            if (n.contains("activation") && n.at("activation") != "gelu") throw Error("config: only the gelu activation is supported");
        }
        c.teacher_kind = j.value("teacher_kind", c.teacher_kind);
        if (j.contains("teacher")) {
            const auto& t = j.at("teacher");
            c.teacher.iterations = t.value("iterations", c.teacher.iterations);
            c.teacher.batch_size = t.value("batch_size", c.teacher.batch_size);
            c.teacher.lr = t.value("lr", c.teacher.lr);
            c.teacher.cond_dropout = t.value("cond_dropout", c.teacher.cond_dropout);
        }
        if (j.contains("distill")) {
            const auto& d = j.at("distill");
            auto& o = c.distill;
            o.k = d.value("k", o.k);
            o.N = d.value("N", o.N);
            o.omega_min = d.value("omega_min", o.omega_min);
            o.omega_max = d.value("omega_max", o.omega_max);
            o.ema_decay = d.value("ema_decay", o.ema_decay);
            o.iterations = d.value("iterations", o.iterations);
            o.batch_size = d.value("batch_size", o.batch_size);
            o.lr = d.value("lr", o.lr);
            o.metric = distance_from_string(d.value("metric", to_string(o.metric)));
            o.huber_c = d.value("huber_c", o.huber_c);
            o.solver = solver_from_string(d.value("solver", to_string(o.solver)));
            o.leapfrog_h = d.value("leapfrog_h", o.leapfrog_h);
            o.sigma_data = d.value("sigma_data", o.sigma_data);
            o.time_scale = d.value("time_scale", o.time_scale);
            o.omega_embed_dim = d.value("omega_embed_dim", o.omega_embed_dim);
            o.warm_start_iterations = d.value("warm_start_iterations", o.warm_start_iterations);
        }
        if (j.contains("samplers")) {
            c.samplers.clear();
            for (const auto& s : j.at("samplers")) c.samplers.push_back(sampler_from_json(s));
        }
        c.eval_samples = j.value("eval_samples", c.eval_samples);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    if (j.contains("schedule") && j.at("schedule").contains("N") && j.contains("distill") && j.at("distill").contains("N") && c.distill.N != c.schedule.N)
        throw Error("config: distill.N must equal schedule.N");
    c.resolve();
    return c;
}

/// Loads a config file; LLCM_SEED (if set) overrides the seed.
inline RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) throw Error("config file '" + path.string() + "' not found");
    ojson j;
    try {
        j = ojson::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config '" + path.string() + "': " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    if (const char* env = std::getenv("LLCM_SEED"); env && *env) {
        try {
            c.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw Error("LLCM_SEED='" + std::string(env) + "' is not an unsigned integer");
        }
    }
    return c;
}

}  // namespace llcm
