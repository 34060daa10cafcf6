// Command-line driver: teacher -> distill -> sample -> eval, plus sweeps and plots.

#include <iostream>

#include "CLI11.hpp"
#include "llcm/commands.hpp"

using namespace llcm;

int main(int argc, char** argv) {
    CLI::App app{"llcm: desk-scale latent consistency distillation"};
    app.require_subcommand(1);
    int code = kExitOk;
    auto dispatch = [&](auto cmd, const auto& opts) { return [&, cmd] { code = run_command([&] { return cmd(opts); }); }; };

    InitOptions init;
    auto* c_init = app.add_subcommand("init", "Write the default configuration");
    c_init->add_option("--out", init.out, "Config path")->capture_default_str();
    c_init->callback(dispatch(cmd_init, init));

    DataOptions data;
    auto* c_data = app.add_subcommand("data", "Draw reference samples from the toy world");
    c_data->add_option("--config", data.config, "Run config")->required();
    c_data->add_option("--n", data.n, "Number of samples")->capture_default_str();
    c_data->add_option("--seed", data.seed, "Sampling seed")->capture_default_str();
    c_data->add_option("--class", data.cls, "Class id or 'all'")->capture_default_str();
    c_data->add_option("--out", data.out, "Output CSV")->required();
    c_data->callback(dispatch(cmd_data, data));

    TeacherOptions teacher;
    auto* c_teacher = app.add_subcommand("teacher", "Train the epsilon-prediction teacher");
    c_teacher->add_option("--config", teacher.config, "Run config")->required();
    c_teacher->add_option("--out", teacher.out, "Run directory (overrides out_dir)");
    c_teacher->add_option("--iterations", teacher.iterations, "Override teacher iterations");
    c_teacher->callback(dispatch(cmd_teacher, teacher));

    DistillOptions distill;
    auto* c_distill = app.add_subcommand("distill", "Distill a consistency student");
    c_distill->add_option("--config", distill.config, "Run config")->required();
    auto* o_teacher = c_distill->add_option("--teacher", distill.teacher, "Teacher checkpoint");
    c_distill->add_flag("--oracle", distill.oracle, "Use the analytic teacher")->excludes(o_teacher);
    c_distill->add_option("--k", distill.k, "Jumping step (grid intervals per pair)");
    c_distill->add_option("--iterations", distill.iterations, "Override distillation iterations");
    c_distill->add_option("--out", distill.out, "Run directory (overrides out_dir)");
    c_distill->callback(dispatch(cmd_distill, distill));

    SampleOptions sample;
    std::string steps = "50";
    auto* c_sample = app.add_subcommand("sample", "Generate samples from a checkpoint or the oracle");
    auto* o_ckpt = c_sample->add_option("--ckpt", sample.ckpt, "Teacher, student or ema checkpoint");
    c_sample->add_flag("--oracle", sample.oracle, "Use the analytic teacher (needs --config)")->excludes(o_ckpt);
    c_sample->add_option("--config", sample.config, "Run config (with --oracle)");
    c_sample->add_option("--solver", sample.solver, std::string("Solver: ") + kValidSolvers + ", consistency")->capture_default_str();
    c_sample->add_option("--steps", steps, "Step counts: N, a,b,c or a..b")->capture_default_str();
    c_sample->add_option("--omega", sample.omega, "Guidance scale")->capture_default_str();
    c_sample->add_option("--class", sample.cls, "Class id, 'null' or 'all'")->capture_default_str();
    c_sample->add_option("--n", sample.n, "Number of samples")->capture_default_str();
    c_sample->add_option("--seed", sample.seed, "Sampling seed")->capture_default_str();
    c_sample->add_option("--leapfrog-h", sample.leapfrog_h, "Leapfrog step parameter")->capture_default_str();
    c_sample->add_option("--out", sample.out, "Output CSV")->required();
    c_sample->callback([&] {
        code = run_command([&] {
            sample.steps = parse_steps(steps);
            return cmd_sample(sample);
        });
    });

    EvalOptions eval;
    auto* c_eval = app.add_subcommand("eval", "Compare two sample sets");
    c_eval->add_option("--ref", eval.ref, "Reference CSV")->required();
    c_eval->add_option("--gen", eval.gen, "Generated CSV")->required();
    c_eval->add_option("--out", eval.out, "Report JSON");
    c_eval->callback(dispatch(cmd_eval, eval));

    SweepOptions sweep;
    std::string k_list = "1,5,10,20,50";
    auto* c_sweep = app.add_subcommand("sweep-k", "Distill once per jumping step and score 4-step samples");
    c_sweep->add_option("--config", sweep.config, "Run config")->required();
    c_sweep->add_option("--k-list", k_list, "Comma-separated k values")->capture_default_str();
    c_sweep->add_option("--iterations", sweep.iterations, "Override distillation iterations");
    c_sweep->add_option("--steps", sweep.steps, "Inference steps for scoring")->capture_default_str();
    c_sweep->add_option("--teacher", sweep.teacher, "Teacher checkpoint (default: per config)");
    c_sweep->add_option("--out", sweep.out, "Output CSV")->required();
    c_sweep->callback([&] {
        code = run_command([&] {
            sweep.k_list = parse_steps(k_list);
            return cmd_sweep_k(sweep);
        });
    });

    HeatmapOptions heat;
    auto* c_heat = app.add_subcommand("heatmap", "2-D histogram of a sample CSV as binary PGM");
    c_heat->add_option("--in", heat.in, "Sample CSV")->required();
    c_heat->add_option("--out", heat.out, "Output PGM")->required();
    c_heat->add_option("--bins", heat.bins, "Bins per axis")->capture_default_str();
    c_heat->add_option("--range", heat.range, "'auto' or xmin,xmax,ymin,ymax")->capture_default_str();
    c_heat->callback(dispatch(cmd_heatmap, heat));

    GradcheckOptions grad;
    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
    c_grad->add_option("--inject-fault", grad.inject_fault, "Flip the sign of one op's backward rule");
    c_grad->callback(dispatch(cmd_gradcheck, grad));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    return code;
}
