// Command-line interface: simulate tagged sequences, run the trackers,
// evaluate against ground truth, and orchestrate full experiment grids.

#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brite/baselines.hpp"
#include "brite/disentangle.hpp"
#include "brite/errors.hpp"
#include "brite/harness.hpp"
#include "brite/rng.hpp"
#include "brite/sim.hpp"
#include "brite/tagseq_io.hpp"
#include "brite/tracker.hpp"

namespace {

using namespace brite;

struct SimulateArgs {
    std::string out{"sequence"};
    std::string scale{"desk"};
    std::string preset{"FA5"};
    std::string motion{"nonrigid"};
    double tag_period_mm{18.0};
    double rotation_deg{15.0};
    double translation_px{5.0};
    double noise_sigma{0.01};
    uint64_t seed{1234};
    int grid{0};   // 0 → from scale
    int frames{0}; // 0 → from scale
};

void apply_scale(const std::string& scale, int& grid, int& frames) {
    if (scale == "desk") {
        if (grid == 0) grid = 64;
        if (frames == 0) frames = 20;
    } else if (scale == "paper") {
        if (grid == 0) grid = 128;
        if (frames == 0) frames = 100;
    } else {
        throw ConfigError("unknown scale '" + scale + "' (expected desk|paper)");
    }
}

int cmd_simulate(const SimulateArgs& a) {
    int grid = a.grid, frames = a.frames;
    apply_scale(a.scale, grid, frames);

    const double spacing = 2.0;
    TagParams params;
    params.mu = 1.0 / a.tag_period_mm;
    params.phi_h = params.phi_v = 2.0 * M_PI;
    const ScalarField2D anatomy =
        gen_oval_anatomy(Rng::derive(a.seed, 1), grid, grid, {2, 5}, {0.35, 1.0}, spacing,
                         spacing);

    MotionSequence motion;
    if (a.motion == "static") {
        motion = static_motion(grid, grid, frames);
    } else if (a.motion == "rotation") {
        const double c = (grid - 1) / 2.0;
        motion = rigid_rotation_motion(a.rotation_deg, {c, c}, frames, grid, grid);
    } else if (a.motion == "nonrigid") {
        motion = bspline_deformation(Rng::derive(a.seed, 2), grid, grid, frames, 12.0, 3.5);
    } else if (a.motion == "translation") {
        motion = translation_motion(a.translation_px, 0.0, frames, grid, grid);
    } else {
        throw ConfigError("unknown motion '" + a.motion +
                          "' (expected static|rotation|nonrigid|translation)");
    }

    SynthesisOpts so;
    so.noise_sigma = a.noise_sigma;
    so.noise_seed = Rng::derive(a.seed, 3);
    TaggedSequence seq =
        synthesize_sequence(anatomy, params, FadingParams::by_name(a.preset), motion,
                            frame_times(frames, 1.1), so);
    seq.seed = a.seed;
    save_sequence(a.out + ".tagseq", seq);
    std::printf("wrote %s.tagseq (%dx%d, %d frames, TP %g mm, %s, %s motion)\n", a.out.c_str(),
                grid, grid, frames, a.tag_period_mm, a.preset.c_str(), a.motion.c_str());
    return 0;
}

int cmd_disentangle(const std::string& seq_path, const std::string& out, int iterations,
                    double tag_period_override) {
    TaggedSequence seq = load_sequence(seq_path);
    DisentangleOpts opts;
    opts.iterations = iterations;
    opts.tag_period_hint_mm = tag_period_override > 0.0 ? tag_period_override : seq.tag_period_mm;
    if (!(opts.tag_period_hint_mm > 0.0)) {
        throw ConfigError("sequence has no tag period; pass --tag-period");
    }
    PixelGridPrior prior(seq.height(), seq.width());
    DisentangleResult r = disentangle(seq.frames_h[0], seq.frames_v[0], prior, opts);
    save_disentangle_result(out, r);
    std::printf("disentangled: loss %.6g, mu %.6g cycles/mm (period %.4g mm), A %.4g, B %.4g\n",
                r.final_loss, r.params.mu, 1.0 / r.params.mu, r.params.A, r.params.B);
    return 0;
}

int cmd_track(const std::string& seq_path, const std::string& out, const std::string& scale,
              int iterations, int dis_iterations, uint64_t seed) {
    TaggedSequence seq = load_sequence(seq_path);
    if (!(seq.tag_period_mm > 0.0)) throw ConfigError("sequence has no tag period");

    DisentangleOpts dopts;
    dopts.iterations = dis_iterations;
    dopts.tag_period_hint_mm = seq.tag_period_mm;
    PixelGridPrior prior(seq.height(), seq.width());
    DisentangleResult dis = disentangle(seq.frames_h[0], seq.frames_v[0], prior, dopts);

    TrackOpts topts = scale == "paper" ? TrackOpts{} : TrackOpts::desk();
    if (iterations > 0) topts.iterations = iterations;
    topts.seed = seed;
    LagrangianResult lr = track_sequence(seq, dis, topts);
    save_lagrangian_result(lr, out);
    const FrameResult& last = lr.frames.back();
    std::printf("tracked %zu frames; final loss %.6g, fading A %.4g, B %.4g\n", lr.frames.size(),
                last.loss, last.fading_amplitude, last.fading_offset);
    return 0;
}

int cmd_baseline(const std::string& method, const std::string& seq_path, const std::string& out) {
    TaggedSequence seq = load_sequence(seq_path);
    if (!(seq.tag_period_mm > 0.0)) throw ConfigError("sequence has no tag period");
    BaselineTrack r;
    if (method == "harp") {
        const auto sh =
            BandpassSpec::first_harmonic(seq.tag_period_mm, Orientation::Horizontal, seq.sy_mm);
        const auto sv =
            BandpassSpec::first_harmonic(seq.tag_period_mm, Orientation::Vertical, seq.sx_mm);
        r = harp_track(seq, sh, sv);
    } else if (method == "sinmod") {
        r = sinmod_track(seq);
    } else {
        throw ConfigError("unknown method '" + method + "' (expected harp|sinmod)");
    }
    save_displacement_series(out + ".motion.tagseq", r.motion);
    size_t flagged = 0, total = 0;
    for (const Mask2D& m : r.valid) {
        flagged += m.on.size() - m.count();
        total += m.on.size();
    }
    std::printf("%s tracked %zu frames; %.2f%% of pixel-frames flagged\n", method.c_str(),
                r.motion.size(), 100.0 * static_cast<double>(flagged) /
                                     static_cast<double>(std::max<size_t>(total, 1)));
    return 0;
}

int cmd_evaluate(const std::string& seq_path, const std::string& est_path,
                 const std::string& label, const std::string& out_csv, int frames_every) {
    TaggedSequence seq = load_sequence(seq_path);
    std::vector<VectorField2D> est = load_displacement_series(est_path);
    std::vector<MetricsRecord> records =
        evaluate_tracks(seq, est, label, frames_every, seq.tag_period_mm,
                        seq.fading.preset.empty() ? "?" : seq.fading.preset, "cli");
    write_metrics_csv(out_csv, records);
    std::printf("wrote %s (%zu records)\n", out_csv.c_str(), records.size());
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& scale, uint64_t seed,
            bool seed_set, const std::string& out, int frames_every) {
    ExperimentConfig config;
    if (!config_path.empty()) {
        config = ExperimentConfig::from_json_file(config_path);
    } else {
        config = scale == "paper" ? ExperimentConfig::paper_scale() : ExperimentConfig::desk();
    }
    if (seed_set) config.master_seed = seed;
    if (!out.empty()) config.out_dir = out;
    if (frames_every > 0) config.eval_every = frames_every;
    config.validate();

    ExperimentResult r = run_experiment(config);
    std::printf("experiment done: %zu records, %zu failures -> %s\n", r.records.size(),
                r.failures.size(), r.csv_path.c_str());
    for (const CellFailure& f : r.failures) {
        std::fprintf(stderr, "  cell %s / %s failed: %s\n", f.cell_id.c_str(), f.method.c_str(),
                     f.message.c_str());
    }
    if (!r.records.empty()) {
        write_report(r.csv_path, (std::filesystem::path(config.out_dir) / "report").string());
        std::printf("report written to %s/report\n", config.out_dir.c_str());
    }
    return r.failures.empty() ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"brightness-invariant tag tracking toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", brite::kAppVersion);

    // simulate
    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "synthesize a tagged sequence with truth");
    simulate->add_option("--out", sa.out, "output prefix");
    simulate->add_option("--seed", sa.seed, "master seed");
    simulate->add_option("--scale", sa.scale, "desk|paper");
    simulate->add_option("--grid", sa.grid, "grid size override");
    simulate->add_option("--frames", sa.frames, "frame count override");
    simulate->add_option("--tag-period", sa.tag_period_mm, "tag period (mm)");
    simulate->add_option("--preset", sa.preset, "fading preset FA5|FA10|none");
    simulate->add_option("--motion", sa.motion, "static|rotation|nonrigid|translation");
    simulate->add_option("--rotation-deg", sa.rotation_deg, "rotation angle");
    simulate->add_option("--translation-px", sa.translation_px, "final translation (px)");
    simulate->add_option("--noise", sa.noise_sigma, "additive noise sigma");

    // disentangle
    std::string d_seq, d_out{"disentangled"};
    int d_iters = 600;
    double d_tp = 0.0;
    auto* disent = app.add_subcommand("disentangle", "recover anatomy and tag parameters at t=0");
    disent->add_option("--seq", d_seq, "input .tagseq")->required();
    disent->add_option("--out", d_out, "output prefix");
    disent->add_option("--iterations", d_iters, "optimizer iterations");
    disent->add_option("--tag-period", d_tp, "tag-period hint override (mm)");

    // track
    std::string t_seq, t_out{"tracked"}, t_scale{"desk"};
    int t_iters = 0, t_dis_iters = 600;
    uint64_t t_seed = 0;
    auto* track = app.add_subcommand("track", "run the learned tracker over a sequence");
    track->add_option("--seq", t_seq, "input .tagseq")->required();
    track->add_option("--out", t_out, "output prefix");
    track->add_option("--scale", t_scale, "desk|paper iteration caps");
    track->add_option("--iterations", t_iters, "per-frame iteration cap override");
    track->add_option("--disentangle-iterations", t_dis_iters, "t=0 iterations");
    track->add_option("--seed", t_seed, "network init seed");

    // baseline
    std::string b_method, b_seq, b_out{"baseline"};
    auto* baseline = app.add_subcommand("baseline", "run a reference tracker");
    baseline->add_option("--method", b_method, "harp|sinmod")->required();
    baseline->add_option("--seq", b_seq, "input .tagseq")->required();
    baseline->add_option("--out", b_out, "output prefix");

    // evaluate
    std::string e_seq, e_est, e_label{"estimate"}, e_out{"metrics.csv"};
    int e_every = 5;
    auto* evaluate = app.add_subcommand("evaluate", "score a displacement series against truth");
    evaluate->add_option("--seq", e_seq, "ground-truth .tagseq")->required();
    evaluate->add_option("--est", e_est, "estimated displacement series")->required();
    evaluate->add_option("--method-name", e_label, "label for the CSV method column");
    evaluate->add_option("--out", e_out, "output CSV path");
    evaluate->add_option("--frames-every", e_every, "evaluate every k-th frame");

    // report
    std::string r_csv, r_out{"report"};
    auto* report = app.add_subcommand("report", "pivot tables, plots, and ranking from metrics");
    report->add_option("--csv", r_csv, "metrics.csv path")->required();
    report->add_option("--out", r_out, "report output directory");

    // run
    std::string run_config, run_out, run_scale{"desk"};
    uint64_t run_seed = 0;
    int run_every = 0;
    auto* run = app.add_subcommand("run", "run the full experiment grid");
    auto* seed_opt = run->add_option("--seed", run_seed, "master seed override");
    run->add_option("--config", run_config, "experiment config JSON");
    run->add_option("--out", run_out, "output directory override");
    run->add_option("--scale", run_scale, "desk|paper (when no --config)");
    run->add_option("--frames-every", run_every, "metric sampling stride override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(sa);
        if (disent->parsed()) return cmd_disentangle(d_seq, d_out, d_iters, d_tp);
        if (track->parsed())
            return cmd_track(t_seq, t_out, t_scale, t_iters, t_dis_iters, t_seed);
        if (baseline->parsed()) return cmd_baseline(b_method, b_seq, b_out);
        if (evaluate->parsed()) return cmd_evaluate(e_seq, e_est, e_label, e_out, e_every);
        if (report->parsed()) {
            brite::write_report(r_csv, r_out);
            std::printf("report written to %s\n", r_out.c_str());
            return 0;
        }
        if (run->parsed())
            return cmd_run(run_config, run_scale, run_seed, seed_opt->count() > 0, run_out,
                           run_every);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
