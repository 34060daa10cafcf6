// Acceptance suite. Prints one PASS/FAIL line per criterion; exits non-zero if
// any criterion fails or overruns its time budget.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "llcm/commands.hpp"

using namespace llcm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << o.detail << " (" << fmt(secs) << " s of " << fmt(budget_s) << " s"
              << (in_time ? "" : ", over budget") << ")" << std::endl;
}

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(LLCM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("llcm_accept_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

struct Lab {
    Schedule sched;
    ToyWorld world = gmm_grid_world();
    LatentCodec codec = LatentCodec::rotation(2, 7);
    OracleNoiseModel oracle{latent_world(world, codec), sched};
};

std::vector<double> fill(std::size_t n, double v) { return std::vector<double>(n, v); }

// alpha_bar at grid index i straight from the product of (1 - beta_k)
double alpha_bar_product(const ScheduleSpec& s, std::size_t i) {
    double a = 1.0;
    for (std::size_t k = 1; k <= i; ++k) a *= 1.0 - (s.beta_min + (s.beta_max - s.beta_min) * static_cast<double>(k - 1) / static_cast<double>(s.N - 1));
    return a;
}

Outcome gradient_correctness() {
    double worst = 0.0;
    std::string worst_name;
    bool all = true;
    const auto results = run_gradcheck();
    for (const auto& r : results) {
        all = all && r.pass && r.max_rel_err < 1e-4;
        if (r.max_rel_err >= worst) {
            worst = r.max_rel_err;
            worst_name = r.check + "/" + r.worst_tensor;
        }
    }
    return {all, std::to_string(results.size()) + " checks, worst rel err " + fmt(worst) + " at " + worst_name};
}

Outcome forward_kernel() {
    const Schedule sched;
    const std::size_t n = 100000;
    const std::vector<double> x0{0.7, -1.3};
    Tensor x(Shape{n, 2});
    for (std::size_t r = 0; r < n; ++r) {
        x(r, 0) = x0[0];
        x(r, 1) = x0[1];
    }
    bool ok = true;
    double worst_mean_z = 0.0, worst_cov = 0.0;
    for (std::size_t i : {1u, 50u, 250u, 500u, 1000u}) {
        const double t = sched.grid_time(i);
        const double abar = alpha_bar_product(sched.spec(), i);
        const double a = std::sqrt(abar), var = 1.0 - abar;
        Rng rng(derive_seed(2024, i));
        const Tensor xt = sched.perturb(x, t, Tensor::randn(n, 2, rng));
        const Moments m = sample_moments(xt);
        for (std::size_t j = 0; j < 2; ++j) {
            const double z = std::abs(m.mean(static_cast<Eigen::Index>(j)) - a * x0[j]) / (std::sqrt(var) / std::sqrt(static_cast<double>(n)));
            worst_mean_z = std::max(worst_mean_z, z);
            ok = ok && z < 4.0;
        }
        const double c00 = std::abs(m.cov(0, 0) / var - 1.0), c11 = std::abs(m.cov(1, 1) / var - 1.0), c01 = std::abs(m.cov(0, 1)) / var;
        worst_cov = std::max({worst_cov, c00, c11, c01});
        ok = ok && c00 < 0.05 && c11 < 0.05 && c01 < 0.05;
    }
    return {ok, "worst mean offset " + fmt(worst_mean_z) + " sigma/sqrt(n), worst relative covariance error " + fmt(worst_cov)};
}

Outcome oracle_pf_ode() {
    const Lab lab;
    SamplerConfig cfg;
    cfg.solver = SolverKind::EulerOde;
    cfg.n_steps = 100;
    cfg.seed = 11;
    const SampleBatch gen = sample(lab.oracle, lab.codec, cfg, 10000, lab.sched);
    const double fd = frechet_distance(gen, sample_world(lab.world, 10000, 12));
    return {fd < 0.05, "FD(100-step Euler, data) = " + fmt(fd) + " (< 0.05)"};
}

Outcome solver_order() {
    const Lab lab;
    SamplerConfig cfg;
    cfg.solver = SolverKind::EulerOde;
    cfg.seed = 21;
    const std::size_t n = 1000;
    cfg.n_steps = 8000;
    const Tensor ref = sample(lab.oracle, lab.codec, cfg, n, lab.sched).points;
    std::vector<double> lx, ly;
    std::string errs;
    for (std::size_t steps : {10u, 20u, 40u, 80u}) {
        cfg.n_steps = steps;
        const Tensor z = sample(lab.oracle, lab.codec, cfg, n, lab.sched).points;
        double e = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) e += (z[i] - ref[i]) * (z[i] - ref[i]);
        e = std::sqrt(e / static_cast<double>(z.size()));
        errs += (errs.empty() ? "" : ", ") + fmt(e);
        lx.push_back(std::log(static_cast<double>(steps)));
        ly.push_back(std::log(e));
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / static_cast<double>(lx.size());
        my += ly[i] / static_cast<double>(ly.size());
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = -sxy / sxx;
    return {std::abs(slope - 1.0) <= 0.2, "slope " + fmt(slope) + " (1.0 +- 0.2), rmse vs 8000 steps: " + errs};
}

Outcome leapfrog_ddim_identity() {
    const Lab lab;
    const std::size_t n = 1000;
    Rng rng(31);
    const Tensor z = 2.0 * Tensor::randn(n, 2, rng);
    std::vector<double> t(n), s(n), omega(n);
    std::vector<int> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        t[r] = rng.uniform(2.0 * lab.sched.t_min(), 1.0);
        s[r] = rng.uniform(lab.sched.t_min(), t[r]);
        omega[r] = rng.uniform(0.0, 4.0);
        labels[r] = r % 5 == 4 ? kNullToken : static_cast<int>(r % 5);
    }
    const X0Eps p = predict_x0_eps(lab.oracle, z, labels, omega, t, lab.sched);
    const Tensor ddim = ddim_step(z, p.x0, p.eps, t, s, lab.sched);
    const LeapfrogState next = leapfrog_step(LeapfrogState::start(z, t), lab.oracle, labels, omega, s, 0.5, lab.sched);
    const double d = max_abs_diff(next.x, ddim);
    return {d < 1e-12, "max |leapfrog(h=1/2) - ddim| = " + fmt(d) + " over 1000 states"};
}

Outcome boundary_condition() {
    const Lab lab;
    const MlpConfig nn;
    const DistillConfig dc;
    double worst = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ConsistencyHead head = make_student(nn, dc, lab.sched, seed);
        Rng rng(derive_seed(seed, 41));
        const std::size_t n = 1000;
        const Tensor z = 3.0 * Tensor::randn(n, 2, rng);
        std::vector<double> omega(n);
        std::vector<int> labels(n);
        for (std::size_t r = 0; r < n; ++r) {
            omega[r] = rng.uniform(0.0, 4.0);
            labels[r] = r % 5 == 4 ? kNullToken : static_cast<int>(r % 5);
        }
        const Tensor f = consistency_forward(head, z, omega, labels, fill(n, lab.sched.t_min()), lab.sched);
        worst = std::max(worst, max_abs_diff(f, z));
    }
    return {worst < 1e-5, "max |f(z, t_min) - z| = " + fmt(worst) + " over 3 fresh students"};
}

// Desk-scale distillation used for criteria 7 and 9. Guidance is not part of
// these criteria, so the student is trained at omega = 0 only.
DistillConfig efficacy_config() {
    DistillConfig dc;
    dc.k = 20;
    dc.omega_min = 0.0;
    dc.omega_max = 0.0;
    dc.iterations = 6000;
    return dc;
}

Outcome distillation_efficacy() {
    const Lab lab;
    const MlpConfig nn;
    const DistillConfig dc = efficacy_config();
    int good = 0;
    std::string detail;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const SampleBatch real = sample_world(lab.world, 10000, derive_seed(seed, 0x72656));
        SamplerConfig sc;
        sc.solver = SolverKind::Ddim;
        sc.n_steps = 50;
        sc.seed = derive_seed(seed, 0x7465);
        const double fd_teacher = frechet_distance(sample(lab.oracle, lab.codec, sc, 10000, lab.sched), real);
        const ConsistencyHead init = initial_student(lab.oracle, lab.world, lab.codec, lab.sched, nn, dc, seed);
        const LlcmResult r = train_llcm(lab.oracle, init, lab.world, lab.codec, lab.sched, dc, seed);
        const std::uint64_t gen_seed = derive_seed(seed, 0x67656e);
        const double fd1 = frechet_distance(consistency_sample(r.ema, lab.codec, 1, 0.0, kAllClasses, 10000, gen_seed, lab.sched), real);
        const double fd4 = frechet_distance(consistency_sample(r.ema, lab.codec, 4, 0.0, kAllClasses, 10000, gen_seed, lab.sched), real);
        const bool ok = fd4 <= 1.5 * fd_teacher && fd4 < fd1;
        good += ok;
        detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + (ok ? " ok" : " no") + ": FD4 " + fmt(fd4) + ", FD1 " + fmt(fd1) + ", DDIM-50 " +
                  fmt(fd_teacher);
    }
    return {good >= 2, std::to_string(good) + "/3 seeds meet FD4 <= 1.5 x DDIM-50 and FD4 < FD1 [" + detail + "]"};
}

Outcome jumping_step_sweep() {
    const fs::path dir = scratch_dir("sweep");
    RunConfig c;
    c.out_dir = (dir / "run").string();
    c.resolve();
    write_file(dir / "config.json", to_json(c).dump(2));
    const fs::path out = dir / "sweep.csv";
    const int code = cli("sweep-k --config " + (dir / "config.json").string() + " --k-list 1,5,10,20,50 --out " + out.string(), dir / "log.txt");
    if (code != 0) return {false, "sweep-k exited " + std::to_string(code) + ": " + read_file(dir / "log.txt")};
    std::istringstream in(read_file(out));
    std::string line;
    std::getline(in, line);
    bool ok = line + "\n" == kSweepHeader;
    std::vector<std::size_t> ks;
    std::string summary;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 7) {
            ok = false;
            continue;
        }
        const std::size_t k = std::stoul(f[0]);
        ks.push_back(k);
        for (std::size_t i = 1; i <= 4; ++i) ok = ok && std::isfinite(std::stod(f[i]));
        ok = ok && f[5] == (k == 20 ? "1" : "0");
        summary += (summary.empty() ? "" : ", ") + std::string("k=") + f[0] + " FD " + fmt(std::stod(f[1]));
    }
    ok = ok && ks == std::vector<std::size_t>{1, 5, 10, 20, 50};
    fs::remove_all(dir);
    return {ok, "table with header and 5 rows: " + summary};
}

Outcome self_consistency() {
    const Lab lab;
    const MlpConfig nn;
    const DistillConfig dc = efficacy_config();
    const std::uint64_t seed = 4;
    const ConsistencyHead fresh = make_student(nn, dc, lab.sched, seed);
    const ConsistencyHead init = initial_student(lab.oracle, lab.world, lab.codec, lab.sched, nn, dc, seed);
    const LlcmResult r = train_llcm(lab.oracle, init, lab.world, lab.codec, lab.sched, dc, seed);
    auto gap = [&](const ConsistencyHead& h) { return self_consistency_gap(h, lab.oracle, lab.sched, 500, 200, 10, 5); };
    const double g_fresh = gap(fresh), g_init = gap(init), g_trained = gap(r.ema);
    const double worst = std::min(g_fresh, g_init) / g_trained;
    return {worst >= 5.0, "gap " + fmt(g_trained) + " trained vs " + fmt(g_fresh) + " fresh and " + fmt(g_init) + " warm-started: improvement " + fmt(worst) + "x (>= 5x)"};
}

Outcome determinism() {
    const fs::path dir = scratch_dir("determinism");
    RunConfig c;
    c.teacher_kind = "trained";
    c.teacher.iterations = 200;
    c.distill.iterations = 150;
    c.distill.warm_start_iterations = 100;
    c.eval_samples = 2000;
    c.resolve();
    write_file(dir / "config.json", to_json(c).dump(2));
    const std::string config = (dir / "config.json").string();
    // everything a run writes except manifest.json, whose wall time differs
    const std::vector<std::string> files{"teacher.ckpt",   "teacher.ckpt.bin", "teacher_loss.csv",  "student.ckpt", "student.ckpt.bin", "ema.ckpt",
                                         "ema.ckpt.bin",   "loss_trace.csv",   "config.json",       "s_ddim.csv",   "s_ddim.json",      "s_ema.csv",
                                         "s_ema.json",     "sweep.csv",        "eval.json"};
    std::vector<std::string> bytes[2];
    for (int rep = 0; rep < 2; ++rep) {
        // same paths both times so path-bearing outputs can match too
        const fs::path run = dir / "run";
        fs::remove_all(run);
        const fs::path log = dir / "log.txt";
        const std::vector<std::string> cmds{
            "teacher --config " + config + " --out " + run.string(),
            "distill --config " + config + " --teacher " + (run / "teacher.ckpt").string() + " --out " + run.string(),
            "sample --ckpt " + (run / "teacher.ckpt").string() + " --solver ddim --steps 20 --n 1000 --seed 3 --out " + (run / "s_ddim.csv").string(),
            "sample --ckpt " + (run / "ema.ckpt").string() + " --solver consistency --steps 4 --n 1000 --seed 3 --out " + (run / "s_ema.csv").string(),
            "sweep-k --config " + config + " --teacher " + (run / "teacher.ckpt").string() + " --k-list 5,20 --iterations 50 --out " + (run / "sweep.csv").string(),
            "eval --ref " + (run / "s_ddim.csv").string() + " --gen " + (run / "s_ema.csv").string() + " --out " + (run / "eval.json").string(),
        };
        for (const auto& cmd : cmds) {
            const int code = cli(cmd, log);
            if (code != 0) return {false, "`llcm " + cmd + "` exited " + std::to_string(code) + ": " + read_file(log)};
        }
        for (const auto& f : files) {
            if (!fs::exists(run / f)) return {false, "missing output " + f};
            bytes[rep].push_back(read_file(run / f));
        }
    }
    std::string differing;
    for (std::size_t i = 0; i < files.size(); ++i)
        if (bytes[0][i] != bytes[1][i]) differing += " " + files[i];
    fs::remove_all(dir);
    if (!differing.empty()) return {false, "outputs differ:" + differing};
    return {true, std::to_string(files.size()) + " outputs of teacher, distill, sample, sweep-k and eval byte-identical across reruns"};
}

}  // namespace

int main() {
    criterion(1, "gradient correctness", 30, gradient_correctness);
    criterion(2, "forward-kernel fidelity", 30, forward_kernel);
    criterion(3, "oracle PF-ODE sanity", 120, oracle_pf_ode);
    criterion(4, "solver order", 120, solver_order);
    criterion(5, "leapfrog-DDIM identity", 10, leapfrog_ddim_identity);
    criterion(6, "boundary condition", 5, boundary_condition);
    criterion(7, "distillation efficacy", 900, distillation_efficacy);
    criterion(8, "jumping-step sweep", 1800, jumping_step_sweep);
    criterion(9, "self-consistency", 300, self_consistency);
    criterion(10, "determinism", 300, determinism);
    std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " of 10 criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
