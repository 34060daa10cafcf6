#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "llcm/config.hpp"
#include "llcm/distill.hpp"
#include "llcm/gradcheck.hpp"
#include "llcm/io.hpp"
#include "llcm/metrics.hpp"
#include "llcm/noise_model.hpp"
#include "llcm/samplers.hpp"

namespace llcm {

enum ExitCode : int { kExitOk = 0, kExitNumeric = 1, kExitUsage = 2 };

/// Runs a command body and maps exceptions onto exit codes.
inline int run_command(const std::function<int()>& body, std::ostream& err = std::cerr) {
    try {
        return body();
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

namespace detail {

inline std::string loss_csv(const std::vector<double>& trace) {
    std::string s = "iter,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) s += std::to_string(i) + "," + format_double(trace[i]) + "\n";
    return s;
}

inline ojson head_json(const ConsistencyHead& h) { return {{"sigma_data", h.sigma_data}, {"time_scale", h.time_scale}, {"t_min", h.t_min}}; }

inline ojson provenance(const RunConfig& cfg) { return {{"world", cfg.world}, {"codec", to_json(cfg.make_codec())}}; }

/// Writes config.json and manifest.json into a run directory.
inline void write_run_files(const fs::path& dir, const RunConfig& cfg, const std::string& command, ojson seeds, double wall_seconds, ojson outputs) {
    const std::string config_text = to_json(cfg).dump(2) + "\n";
    write_file(dir / "config.json", config_text);
    ojson m;
    m["format_version"] = kFormatVersion;
    m["command"] = command;
    m["seeds"] = std::move(seeds);
    m["wall_seconds"] = wall_seconds;
    m["config_hash"] = git_hash(config_text);
    m["outputs"] = std::move(outputs);
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }

inline ConsistencyHead head_from_checkpoint(const Checkpoint& ck) {
    ConsistencyHead h;
    h.params = ck.params;
    const auto& j = ck.extra.at("head");
    h.sigma_data = j.at("sigma_data").get<double>();
    h.time_scale = j.at("time_scale").get<double>();
    h.t_min = j.at("t_min").get<double>();
    return h;
}

}  // namespace detail

inline std::uint64_t teacher_seed(std::uint64_t seed) { return derive_seed(seed, 0x74); }
inline std::uint64_t distill_seed(std::uint64_t seed) { return derive_seed(seed, 0x64); }

// ---------------------------------------------------------------------------

struct InitOptions {
    fs::path out = "config.json";
};

/// Writes the default configuration, fully resolved.
inline int cmd_init(const InitOptions& o) {
    RunConfig c;
    c.resolve();
    write_file(o.out, to_json(c).dump(2) + "\n");
    std::cout << "wrote " << o.out.string() << "\n";
    return kExitOk;
}

struct DataOptions {
    fs::path config;
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    std::string cls = "all";
    fs::path out;
};

inline int parse_class(const std::string& s) {
    if (s == "all") return kAllClasses;
    if (s == "null") return kNullToken;
    std::size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || v < 0) throw Error("--class must be a class id, 'null' or 'all', got '" + s + "'");
    return v;
}

/// Reference samples from the toy world (data space).
inline int cmd_data(const DataOptions& o) {
    const RunConfig cfg = load_run_config(o.config);
    const ToyWorld w = cfg.make_world();
    const int c = parse_class(o.cls);
    if (c >= static_cast<int>(w.n_classes)) throw Error("--class " + o.cls + " outside [0, " + std::to_string(w.n_classes) + ")");
    SampleBatch b = sample_world(w, o.n, o.seed, c == kAllClasses ? kNullToken : c);
    b.manifest["source"] = "world";
    b.manifest["world"] = cfg.world;
    b.manifest["seed"] = o.seed;
    b.manifest["n"] = o.n;
    write_samples(o.out, b);
    std::cout << "wrote " << o.n << " samples to " << o.out.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct TeacherOptions {
    fs::path config;
    std::optional<fs::path> out;
    std::optional<std::size_t> iterations;
};

inline int cmd_teacher(const TeacherOptions& o) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_run_config(o.config);
    if (o.out) cfg.out_dir = o.out->string();
    if (o.iterations) cfg.teacher.iterations = *o.iterations;
    const fs::path dir = cfg.out_dir;
    const Schedule sched(cfg.schedule);
    const ToyWorld w = cfg.make_world();
    const LatentCodec codec = cfg.make_codec();
    const std::uint64_t seed = teacher_seed(cfg.seed);
    std::cerr << "teacher: " << cfg.teacher.iterations << " iterations, batch " << cfg.teacher.batch_size << "\n";
    const TrainResult r = train_teacher(w, codec, sched, cfg.nn, cfg.teacher, seed);
    Checkpoint ck{"teacher", r.params, cfg.schedule, cfg.teacher.iterations, detail::provenance(cfg)};
    save_checkpoint(dir / "teacher.ckpt", ck);
    write_file(dir / "teacher_loss.csv", detail::loss_csv(r.loss_trace));
    detail::write_run_files(dir, cfg, "teacher", {{"global", cfg.seed}, {"teacher", seed}}, detail::seconds_since(t0), {"teacher.ckpt", "teacher_loss.csv"});
    std::cout << "teacher loss " << r.loss_trace.front() << " -> " << r.loss_trace.back() << "; wrote " << (dir / "teacher.ckpt").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct DistillOptions {
    fs::path config;
    std::optional<fs::path> teacher;
    bool oracle = false;
    std::optional<std::size_t> k;
    std::optional<std::size_t> iterations;
    std::optional<fs::path> out;
};

/// Teacher noise model for distillation: a checkpoint, or the analytic oracle.
inline std::unique_ptr<NoiseModel> load_teacher(const RunConfig& cfg, const std::optional<fs::path>& ckpt, bool oracle, const Schedule& sched) {
    if (ckpt && oracle) throw Error("--teacher and --oracle are mutually exclusive");
    const bool use_oracle = oracle || (!ckpt && cfg.teacher_kind == "oracle");
    if (use_oracle) {
        const ToyWorld w = cfg.make_world();
        if (!w.is_mixture()) throw Error("oracle teacher needs a mixture world, config has '" + cfg.world + "'");
        return std::make_unique<OracleNoiseModel>(latent_world(w, cfg.make_codec()), sched);
    }
    const fs::path path = ckpt ? *ckpt : fs::path(cfg.out_dir) / "teacher.ckpt";
    if (!fs::exists(path)) throw Error("teacher checkpoint '" + path.string() + "' not found (run `llcm teacher` or pass --oracle)");
    const Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "teacher") throw Error("'" + path.string() + "' is a " + ck.kind + " checkpoint, expected teacher");
    return std::make_unique<MlpNoiseModel>(ck.params);
}

inline int cmd_distill(const DistillOptions& o) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = load_run_config(o.config);
    if (o.out) cfg.out_dir = o.out->string();
    if (o.k) cfg.distill.k = *o.k;
    if (o.iterations) cfg.distill.iterations = *o.iterations;
    cfg.teacher_kind = (o.oracle || (!o.teacher && cfg.teacher_kind == "oracle")) ? "oracle" : "trained";
    cfg.resolve();
    const fs::path dir = cfg.out_dir;
    const Schedule sched(cfg.schedule);
    const auto teacher = load_teacher(cfg, o.teacher, o.oracle, sched);
    const std::uint64_t seed = distill_seed(cfg.seed);
    const ToyWorld w = cfg.make_world();
    const LatentCodec codec = cfg.make_codec();
    std::cerr << "distill: k = " << cfg.distill.k << ", " << cfg.distill.iterations << " iterations, teacher " << cfg.teacher_kind << "\n";
    const ConsistencyHead init = initial_student(*teacher, w, codec, sched, cfg.nn, cfg.distill, seed);
    const LlcmResult r = train_llcm(*teacher, init, w, codec, sched, cfg.distill, seed);
    ojson extra = detail::provenance(cfg);
    extra["head"] = detail::head_json(r.student);
    extra["k"] = cfg.distill.k;
    save_checkpoint(dir / "student.ckpt", Checkpoint{"student", r.student.params, cfg.schedule, cfg.distill.iterations, extra});
    save_checkpoint(dir / "ema.ckpt", Checkpoint{"ema", r.ema.params, cfg.schedule, cfg.distill.iterations, extra});
    write_file(dir / "loss_trace.csv", detail::loss_csv(r.loss_trace));
    detail::write_run_files(dir, cfg, "distill", {{"global", cfg.seed}, {"distill", seed}}, detail::seconds_since(t0), {"student.ckpt", "ema.ckpt", "loss_trace.csv"});
    std::cout << "distill loss " << r.loss_trace.front() << " -> " << r.loss_trace.back() << "; wrote " << (dir / "ema.ckpt").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SampleOptions {
    std::optional<fs::path> ckpt;
    std::optional<fs::path> config;
    bool oracle = false;
    std::string solver = "ddim";
    std::vector<std::size_t> steps{50};
    double omega = 0.0;
    std::string cls = "all";
    std::size_t n = 10000;
    std::uint64_t seed = 0;
    double leapfrog_h = 0.5;
    fs::path out;
};

/// "1,2,4" or "1..20".
inline std::vector<std::size_t> parse_steps(const std::string& s) {
    std::vector<std::size_t> out;
    auto num = [&](const std::string& t) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(t, &pos);
        } catch (const std::exception&) {
            pos = std::string::npos;
        }
        if (pos != t.size() || v == 0) throw Error("--steps: '" + t + "' is not a positive integer");
        return static_cast<std::size_t>(v);
    };
    if (const auto dots = s.find(".."); dots != std::string::npos) {
        const std::size_t a = num(s.substr(0, dots)), b = num(s.substr(dots + 2));
        if (b < a) throw Error("--steps: empty range '" + s + "'");
        for (std::size_t i = a; i <= b; ++i) out.push_back(i);
        return out;
    }
    std::size_t p = 0;
    while (p <= s.size()) {
        const std::size_t c = std::min(s.find(',', p), s.size());
        out.push_back(num(s.substr(p, c - p)));
        p = c + 1;
    }
    return out;
}

/// Output path for one entry of a step sweep: stem_steps<n>.ext when sweeping.
inline fs::path step_output(const fs::path& out, std::size_t steps, bool sweep) {
    if (!sweep) return out;
    fs::path p = out;
    p.replace_filename(out.stem().string() + "_steps" + std::to_string(steps) + out.extension().string());
    return p;
}

inline int cmd_sample(const SampleOptions& o) {
    if (o.steps.empty()) throw Error("--steps must list at least one step count");
    if (o.ckpt && o.oracle) throw Error("--ckpt and --oracle are mutually exclusive");
    if (!o.ckpt && !o.oracle) throw Error("sample needs --ckpt PATH or --oracle");
    const bool consistency_name = o.solver == "consistency";
    // "consistency" is an alias of leapfrog that only student checkpoints accept
    const SolverKind solver = consistency_name ? SolverKind::Leapfrog : solver_from_string(o.solver);
    const int condition = parse_class(o.cls);
    const bool sweep = o.steps.size() > 1;

    std::unique_ptr<NoiseModel> model;
    std::optional<ConsistencyHead> head;
    LatentCodec codec = LatentCodec::identity(2);
    Schedule sched;
    ojson source;
    if (o.oracle) {
        if (!o.config) throw Error("--oracle needs --config for the world definition");
        const RunConfig cfg = load_run_config(*o.config);
        sched = Schedule(cfg.schedule);
        codec = cfg.make_codec();
        model = load_teacher(cfg, std::nullopt, true, sched);
        source = {{"kind", "oracle"}, {"world", cfg.world}};
    } else {
        if (!fs::exists(*o.ckpt)) throw Error("checkpoint '" + o.ckpt->string() + "' not found");
        const Checkpoint ck = load_checkpoint(*o.ckpt);
        sched = Schedule(ck.schedule);
        codec = codec_from_json(ck.extra.at("codec"));
        source = {{"kind", ck.kind}, {"ckpt", o.ckpt->filename().string()}, {"ckpt_hash", git_hash(read_file(blob_path(*o.ckpt)))}};
        if (ck.kind == "teacher") {
            model = std::make_unique<MlpNoiseModel>(ck.params);
        } else {
            head = detail::head_from_checkpoint(ck);
        }
    }
    if (head && solver != SolverKind::Leapfrog)
        throw Error("consistency checkpoints sample with --solver leapfrog (or consistency), got '" + o.solver + "'");
    if (!head && consistency_name) throw Error("--solver consistency needs a student or ema checkpoint");
    const std::size_t n_classes = head ? head->params.config.n_classes : model->n_classes();
    if (condition >= static_cast<int>(n_classes)) throw Error("--class " + o.cls + " outside [0, " + std::to_string(n_classes) + ")");

    for (const std::size_t steps : o.steps) {
        SampleBatch b;
        if (head) {
            b = consistency_sample(*head, codec, steps, o.omega, condition, o.n, o.seed, sched);
        } else {
            SamplerConfig sc;
            sc.solver = solver;
            sc.n_steps = steps;
            sc.omega = o.omega;
            sc.condition = condition;
            sc.seed = o.seed;
            sc.leapfrog_h = o.leapfrog_h;
            b = sample(*model, codec, sc, o.n, sched);
        }
        b.manifest["model"] = source;
        const fs::path path = step_output(o.out, steps, sweep);
        write_samples(path, b);
        std::cout << "wrote " << path.string() << " (" << steps << " steps)\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
    fs::path ref, gen;
    std::optional<fs::path> out;
};

inline int cmd_eval(const EvalOptions& o) {
    for (const auto& p : {o.ref, o.gen})
        if (!fs::exists(p)) throw Error("sample file '" + p.string() + "' not found");
    const SampleBatch ref = read_csv(o.ref), gen = read_csv(o.gen);
    if (ref.dim() != gen.dim()) throw Error("dimension mismatch: ref has " + std::to_string(ref.dim()) + " columns, gen has " + std::to_string(gen.dim()));
    const MetricReport r = evaluate(ref.points, gen.points);
    const std::string text = r.to_json().dump(2) + "\n";
    if (o.out) write_file(*o.out, text);
    std::cout << text;
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SweepOptions {
    fs::path config;
    std::vector<std::size_t> k_list{1, 5, 10, 20, 50};
    fs::path out;
    std::optional<std::size_t> iterations;
    std::size_t steps = 4;
    std::optional<fs::path> teacher;
};

inline constexpr std::size_t kDefaultJumpingStep = 20;

inline const char* kSweepHeader = "k,frechet_distance,mmd2,final_loss,initial_loss,default_k,seed\n";

/// Distills once per k with one shared seed and scores 4-step samples
/// against the same reference batch.
inline int cmd_sweep_k(const SweepOptions& o) {
    if (o.k_list.empty()) throw Error("--k-list must name at least one k");
    RunConfig cfg = load_run_config(o.config);
    if (o.iterations) cfg.distill.iterations = *o.iterations;
    for (const std::size_t k : o.k_list) {
        RunConfig c = cfg;
        c.distill.k = k;
        c.resolve();
    }
    const Schedule sched(cfg.schedule);
    const auto teacher = load_teacher(cfg, o.teacher, !o.teacher && cfg.teacher_kind == "oracle", sched);
    const ToyWorld w = cfg.make_world();
    const LatentCodec codec = cfg.make_codec();
    const SampleBatch ref = sample_world(w, cfg.eval_samples, derive_seed(cfg.seed, 0x726566));
    const std::uint64_t seed = distill_seed(cfg.seed);
    // the starting network does not depend on k
    const ConsistencyHead init = initial_student(*teacher, w, codec, sched, cfg.nn, cfg.distill, seed);
    std::string csv = kSweepHeader;
    for (const std::size_t k : o.k_list) {
        RunConfig c = cfg;
        c.distill.k = k;
        std::cerr << "sweep: k = " << k << "\n";
        const LlcmResult r = train_llcm(*teacher, init, w, codec, sched, c.distill, seed);
        const SampleBatch gen = consistency_sample(r.ema, codec, o.steps, 0.0, kAllClasses, cfg.eval_samples, derive_seed(cfg.seed, 0x67656e), sched);
        const MetricReport m = evaluate(ref.points, gen.points);
        csv += std::to_string(k) + "," + format_double(m.frechet_distance) + "," + format_double(m.mmd2) + "," + format_double(r.loss_trace.back()) + "," +
               format_double(r.loss_trace.front()) + "," + (k == kDefaultJumpingStep ? "1" : "0") + "," + std::to_string(cfg.seed) + "\n";
    }
    write_file(o.out, csv);
    std::cout << csv;
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct HeatmapOptions {
    fs::path in, out;
    std::size_t bins = 128;
    std::string range = "auto";
};

struct Histogram2d {
    std::size_t bins = 0;
    std::array<double, 4> range{};  // xmin, xmax, ymin, ymax
    std::vector<std::size_t> counts;  // row-major, row 0 = top (largest y)
};

inline std::array<double, 4> parse_range(const std::string& s) {
    std::array<double, 4> r{};
    std::size_t p = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t c = i < 3 ? s.find(',', p) : s.size();
        if (c == std::string::npos) throw Error("--range must be 'auto' or xmin,xmax,ymin,ymax");
        const std::string tok = s.substr(p, c - p);
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), r[i]);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) throw Error("--range: bad number '" + tok + "'");
        p = c + 1;
    }
    if (!(r[0] < r[1] && r[2] < r[3])) throw Error("--range needs xmin < xmax and ymin < ymax");
    return r;
}

/// Histogram of the first two coordinates; points outside the range are dropped.
inline Histogram2d histogram_2d(const Tensor& pts, std::size_t bins, const std::optional<std::array<double, 4>>& range) {
    if (pts.rows() == 0) throw Error("heatmap: no points");
    if (pts.cols() < 2) throw Error("heatmap: need at least 2 coordinates");
    if (bins == 0) throw Error("heatmap: bins must be >= 1");
    Histogram2d h{bins, {}, std::vector<std::size_t>(bins * bins, 0)};
    if (range) {
        h.range = *range;
    } else {
        h.range = {pts(0, 0), pts(0, 0), pts(0, 1), pts(0, 1)};
        for (std::size_t r = 0; r < pts.rows(); ++r) {
            h.range[0] = std::min(h.range[0], pts(r, 0));
            h.range[1] = std::max(h.range[1], pts(r, 0));
            h.range[2] = std::min(h.range[2], pts(r, 1));
            h.range[3] = std::max(h.range[3], pts(r, 1));
        }
        for (int a = 0; a < 4; a += 2)
            if (!(h.range[a] < h.range[a + 1])) {
                h.range[a] -= 0.5;
                h.range[a + 1] += 0.5;
            }
    }
    const double wx = (h.range[1] - h.range[0]) / static_cast<double>(bins), wy = (h.range[3] - h.range[2]) / static_cast<double>(bins);
    for (std::size_t r = 0; r < pts.rows(); ++r) {
        const double x = pts(r, 0), y = pts(r, 1);
        if (!(x >= h.range[0] && x <= h.range[1] && y >= h.range[2] && y <= h.range[3])) continue;
        const auto ix = std::min(bins - 1, static_cast<std::size_t>((x - h.range[0]) / wx));
        const auto iy = std::min(bins - 1, static_cast<std::size_t>((y - h.range[2]) / wy));
        ++h.counts[(bins - 1 - iy) * bins + ix];
    }
    return h;
}

/// Binary 8-bit PGM, intensity linear in count (max count -> 255).
inline std::string to_pgm(const Histogram2d& h) {
    std::string s = "P5\n" + std::to_string(h.bins) + " " + std::to_string(h.bins) + "\n255\n";
    const std::size_t peak = *std::max_element(h.counts.begin(), h.counts.end());
    for (const std::size_t c : h.counts) s += static_cast<char>(peak ? static_cast<unsigned char>(std::lround(255.0 * static_cast<double>(c) / static_cast<double>(peak))) : 0);
    return s;
}

inline int cmd_heatmap(const HeatmapOptions& o) {
    if (!fs::exists(o.in)) throw Error("sample file '" + o.in.string() + "' not found");
    const SampleBatch b = read_csv(o.in);
    if (b.size() == 0) throw Error("'" + o.in.string() + "' contains no samples");
    std::optional<std::array<double, 4>> range;
    if (o.range != "auto") range = parse_range(o.range);
    const Histogram2d h = histogram_2d(b.points, o.bins, range);
    write_file(o.out, to_pgm(h));
    std::cout << "wrote " << o.out.string() << " (" << o.bins << "x" << o.bins << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckOptions {
    std::optional<std::string> inject_fault;
};

inline std::optional<Op> op_from_string(const std::string& s) {
    for (int i = static_cast<int>(Op::MatMul); i <= static_cast<int>(Op::ConcatCols); ++i)
        if (s == op_name(static_cast<Op>(i))) return static_cast<Op>(i);
    return std::nullopt;
}

inline int cmd_gradcheck(const GradcheckOptions& o) {
    std::optional<Op> fault;
    if (o.inject_fault) {
        fault = op_from_string(*o.inject_fault);
        if (!fault) throw Error("--inject-fault: unknown op '" + *o.inject_fault + "'");
    }
    bool ok = true;
    for (const auto& r : run_gradcheck(fault)) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.check << " max_rel_err=" << r.max_rel_err << (r.pass ? "" : " worst=" + r.worst_tensor) << "\n";
        ok = ok && r.pass;
    }
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? kExitOk : kExitNumeric;
}

}  // namespace llcm
