// Harness tests: config parsing/validation, CSV round-trips, metric
// evaluation, grid runs with fault isolation, determinism, and reporting.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "brite/errors.hpp"
#include "brite/harness.hpp"
#include "brite/plot.hpp"
#include "brite/sim.hpp"
#include "brite/tagseq_io.hpp"

using namespace brite;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("brite_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Small, fast grid: reference trackers only.
ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig c;
    c.grid_size = 48;
    c.n_frames = 4;
    c.duration_s = 0.4;
    c.tag_periods_mm = {18.0};
    c.presets = {"FA5"};
    c.motion.include_static = true;
    c.motion.include_rotation = false;
    c.motion.include_nonrigid = true;
    c.motion.nonrigid_seeds = 1;
    c.methods = {"harp", "sinmod"};
    c.eval_every = 2;
    c.out_dir = out.string();
    c.master_seed = 77;
    return c;
}

MetricsRecord mk_record(const std::string& method, double t, double epe_median) {
    MetricsRecord r;
    r.method = method;
    r.tag_period_mm = 12.0;
    r.preset = "FA5";
    r.motion_id = "static";
    r.time_s = t;
    r.epe.mean = r.epe.median = epe_median;
    r.epe.q1 = 0.5 * epe_median;
    r.epe.q3 = 1.5 * epe_median;
    r.epe.n = 100;
    r.emps = r.epe;
    return r;
}

} // namespace

TEST_CASE("experiment config round-trips through JSON with exact field names") {
    ExperimentConfig c = ExperimentConfig::desk();
    c.master_seed = 987654321012345ULL;
    c.tag_periods_mm = {9.0, 26.0};
    c.sinmod.skew = 0.6;
    const std::string text = c.to_json_text();

    // the serialized keys mirror the struct fields exactly
    for (const char* key :
         {"\"grid_size\"", "\"n_frames\"", "\"duration_s\"", "\"spacing_mm\"",
          "\"tag_periods_mm\"", "\"presets\"", "\"motion\"", "\"methods\"", "\"brite\"",
          "\"harp\"", "\"sinmod\"", "\"noise_sigma\"", "\"eval_every\"", "\"out_dir\"",
          "\"master_seed\"", "\"nonrigid_seeds\"", "\"rotation_deg\"", "\"kernel_size\"",
          "\"quality_exponent\"", "\"iterations\"", "\"warm_start_fading\""}) {
        CAPTURE(key);
        CHECK(text.find(key) != std::string::npos);
    }

    ExperimentConfig back = ExperimentConfig::from_json_text(text);
    CHECK(back.grid_size == c.grid_size);
    CHECK(back.n_frames == c.n_frames);
    CHECK(back.tag_periods_mm == c.tag_periods_mm);
    CHECK(back.presets == c.presets);
    CHECK(back.methods == c.methods);
    CHECK(back.master_seed == c.master_seed);
    CHECK(back.sinmod.skew == doctest::Approx(0.6));
    CHECK(back.brite.iterations == c.brite.iterations);
    CHECK(back.motion.nonrigid_seeds == c.motion.nonrigid_seeds);
}

TEST_CASE("experiment config validation rejects out-of-contract values") {
    auto base = [] { return ExperimentConfig::desk(); };

    auto c = base();
    c.methods.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.tag_periods_mm = {12.0, -3.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.tag_periods_mm.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.presets = {"FA7"};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.methods = {"brite", "magic"};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.methods = {"harp", "harp"};
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.motion.include_static = c.motion.include_rotation = c.motion.include_nonrigid = false;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.motion.bspline_max_disp_px = 0.9 * c.motion.bspline_spacing_px;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = base();
    c.eval_every = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    // unknown JSON fields are typos, not extensions
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("{\"grid_sizes\": 64}"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("{\"motion\": {\"rotationdeg\": 3}}"),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"), ConfigError);

    // partial configs inherit defaults
    ExperimentConfig partial = ExperimentConfig::from_json_text("{\"methods\": [\"harp\"]}");
    CHECK(partial.methods == std::vector<std::string>{"harp"});
    CHECK(partial.grid_size == 64);
}

TEST_CASE("evaluation frame schedule is every k-th plus the final frame") {
    CHECK(evaluation_frames(20, 5) == std::vector<int>{0, 5, 10, 15, 19});
    CHECK(evaluation_frames(6, 2) == std::vector<int>{0, 2, 4, 5});
    CHECK(evaluation_frames(1, 1) == std::vector<int>{0});
    CHECK(evaluation_frames(5, 10) == std::vector<int>{0, 4});
    CHECK(evaluation_frames(4, 1) == std::vector<int>{0, 1, 2, 3});
    CHECK_THROWS_AS(evaluation_frames(0, 1), InvalidInput);
    CHECK_THROWS_AS(evaluation_frames(5, 0), InvalidInput);
}

TEST_CASE("metrics CSV header and round-trip") {
    CHECK(metrics_csv_header() ==
          "method,tag_period_mm,preset,motion_id,time_s,epe_mean,epe_median,epe_q1,epe_q3,"
          "emps_mean,emps_median,emps_q1,emps_q3,n_px");

    const fs::path dir = fresh_dir("csv");
    std::vector<MetricsRecord> recs{mk_record("harp", 0.0, 0.25), mk_record("brite", 0.1, 0.125)};
    recs[1].epe.n = recs[1].emps.n = 421;
    const std::string path = (dir / "m.csv").string();
    write_metrics_csv(path, recs);

    auto back = read_metrics_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].method == "harp");
    CHECK(back[1].method == "brite");
    CHECK(back[0].epe.median == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(back[1].epe.q3 == doctest::Approx(0.1875).epsilon(1e-9));
    CHECK(back[1].epe.n == 421);
    CHECK(back[0].motion_id == "static");

    // malformed inputs
    std::ofstream(dir / "bad1.csv") << "a,b,c\n";
    CHECK_THROWS_AS(read_metrics_csv((dir / "bad1.csv").string()), FormatError);
    std::ofstream(dir / "bad2.csv") << metrics_csv_header() << "\nharp,12,FA5,static,0\n";
    CHECK_THROWS_AS(read_metrics_csv((dir / "bad2.csv").string()), FormatError);
    std::ofstream(dir / "bad3.csv") << metrics_csv_header()
                                    << "\nharp,twelve,FA5,static,0,0,0,0,0,0,0,0,0,9\n";
    CHECK_THROWS_AS(read_metrics_csv((dir / "bad3.csv").string()), FormatError);
    CHECK_THROWS_AS(read_metrics_csv((dir / "missing.csv").string()), FormatError);
}

TEST_CASE("track evaluation scores against embedded truth over the foreground") {
    const int n = 48, T = 3;
    auto anatomy = gen_oval_anatomy(31, n, n);
    TagParams params;
    params.mu = 1.0 / 12.0;
    auto seq = synthesize_sequence(anatomy, params, FadingParams::none(),
                                   translation_motion(1.0, 0.5, T, n, n), frame_times(T, 0.2));

    // perfect estimate: zero error at every evaluated frame
    std::vector<VectorField2D> exact;
    for (const auto& d : seq.gt_motion) exact.push_back(d.forward);
    auto recs = evaluate_tracks(seq, exact, "oracle", 1, 12.0, "none", "trans");
    REQUIRE(recs.size() == 3);
    for (const auto& r : recs) {
        CHECK(r.epe.mean == 0.0);
        CHECK(r.emps.median == 0.0);
        CHECK(r.method == "oracle");
        // every record time is one of the sequence timestamps
        CHECK(std::count(seq.times_s.begin(), seq.times_s.end(), r.time_s) == 1);
    }

    // mismatched frame count and missing truth are rejected
    std::vector<VectorField2D> short_est(exact.begin(), exact.end() - 1);
    CHECK_THROWS_AS(evaluate_tracks(seq, short_est, "x", 1, 12.0, "none", "m"), ShapeError);
    TaggedSequence no_truth = seq;
    no_truth.has_truth = false;
    CHECK_THROWS_AS(evaluate_tracks(no_truth, exact, "x", 1, 12.0, "none", "m"), InvalidInput);
}

TEST_CASE("experiment run produces records, artifacts, and a manifest") {
    const fs::path dir = fresh_dir("run");
    ExperimentConfig c = tiny_config(dir);
    ExperimentResult r = run_experiment(c);

    CHECK(r.failures.empty());
    // 2 methods × 2 cells × 3 evaluated frames (0, 2, 3)
    CHECK(r.records.size() == 12);
    CHECK(fs::exists(r.csv_path));
    CHECK(fs::exists(r.manifest_path));
    CHECK(fs::exists(dir / "cells" / "tp18_FA5_static.tagseq"));
    CHECK(fs::exists(dir / "cells" / "tp18_FA5_static.harp.motion.tagseq"));
    CHECK(fs::exists(dir / "cells" / "tp18_FA5_nonrigid01.sinmod.motion.tagseq"));

    // identical foreground across methods within a cell
    for (const auto& a : r.records) {
        for (const auto& b : r.records) {
            if (a.motion_id == b.motion_id) CHECK(a.epe.n == b.epe.n);
        }
    }
    // all record times come from the frame schedule
    const auto times = frame_times(c.n_frames, c.duration_s);
    for (const auto& rec : r.records) {
        CHECK(std::count(times.begin(), times.end(), rec.time_s) == 1);
    }

    const std::string manifest = slurp(r.manifest_path);
    CHECK(manifest.find("\"app_version\"") != std::string::npos);
    CHECK(manifest.find("\"master_seed\"") != std::string::npos);
    CHECK(manifest.find("\"fftw_version\"") != std::string::npos);
    CHECK(manifest.find("tp18_FA5_static") != std::string::npos);

    // the sequence artifact reloads with its truth intact
    TaggedSequence seq = load_sequence((dir / "cells" / "tp18_FA5_static.tagseq").string());
    CHECK(seq.has_truth);
    CHECK(seq.n_frames() == 4);
}

TEST_CASE("per-method failures are recorded without aborting the run") {
    const fs::path dir = fresh_dir("fail");
    ExperimentConfig c = tiny_config(dir);
    c.motion.include_nonrigid = false; // one cell is enough
    c.sinmod.skew = 1.5;               // rejected by the tracker at run time
    ExperimentResult r = run_experiment(c);

    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].method == "sinmod");
    CHECK(r.failures[0].cell_id == "tp18_FA5_static");
    CHECK(!r.failures[0].message.empty());
    // the other method still produced its records
    CHECK(r.records.size() == 3);
    CHECK(r.records[0].method == "harp");
    const std::string manifest = slurp(r.manifest_path);
    CHECK(manifest.find("error:") != std::string::npos);

    // unwritable output directory fails upfront
    ExperimentConfig bad = tiny_config(dir / "blocked");
    std::ofstream(dir / "blocked") << "file in the way";
    CHECK_THROWS_AS(run_experiment(bad), ConfigError);
}

TEST_CASE("identical seeds give byte-identical metrics") {
    const fs::path dir = fresh_dir("det");
    ExperimentConfig c = tiny_config(dir / "a");
    c.motion.include_nonrigid = false;
    ExperimentResult r1 = run_experiment(c);
    const std::string first = slurp(r1.csv_path);

    ExperimentResult r2 = run_experiment(c); // same config, same out dir
    CHECK(slurp(r2.csv_path) == first);
    CHECK(first.find("harp") != std::string::npos);
}

TEST_CASE("learned tracker integrates with the harness at micro scale") {
    const fs::path dir = fresh_dir("brite");
    ExperimentConfig c = tiny_config(dir);
    c.grid_size = 32;
    c.n_frames = 2;
    c.motion.include_nonrigid = false;
    c.methods = {"brite"};
    c.brite.iterations = 120;
    c.brite.disentangle_iterations = 150;
    c.eval_every = 1;
    ExperimentResult r = run_experiment(c);
    CHECK(r.failures.empty());
    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].method == "brite");
    CHECK(r.records[0].epe.mean == 0.0); // frame 0 is identity
    CHECK(r.records[1].epe.mean < 0.5);  // static cell, generous bound
}

TEST_CASE("report emits pivots, plots, and a ranking that preserves ordering") {
    const fs::path dir = fresh_dir("report");

    // two methods with a known final-frame ordering, two motions each
    std::vector<MetricsRecord> recs;
    for (const char* motion : {"m1", "m2"}) {
        for (double t : {0.0, 0.5, 1.0}) {
            auto good = mk_record("good", t, 0.1 * (1.0 + t));
            good.motion_id = motion;
            auto bad = mk_record("bad", t, 1.0 + t);
            bad.motion_id = motion;
            recs.push_back(good);
            recs.push_back(bad);
        }
    }
    const std::string csv = (dir / "m.csv").string();
    write_metrics_csv(csv, recs);
    write_report(csv, (dir / "rep").string());

    CHECK(fs::exists(dir / "rep" / "pivot_epe_tp12_FA5.csv"));
    CHECK(fs::exists(dir / "rep" / "pivot_emps_tp12_FA5.csv"));
    CHECK(fs::exists(dir / "rep" / "plot_epe_tp12_FA5.ppm"));
    CHECK(fs::exists(dir / "rep" / "plots_legend.csv"));

    const std::string ranking = slurp(dir / "rep" / "ranking.csv");
    CHECK(ranking.find("rank,method,final_epe_median,final_emps_median,n_cells") == 0);
    const size_t good_pos = ranking.find("1,good");
    const size_t bad_pos = ranking.find("2,bad");
    CHECK(good_pos != std::string::npos);
    CHECK(bad_pos != std::string::npos);
    CHECK(good_pos < bad_pos);

    // aggregation is invariant to record order
    std::mt19937 shuffle_rng(7);
    std::shuffle(recs.begin(), recs.end(), shuffle_rng);
    const std::string csv2 = (dir / "m2.csv").string();
    write_metrics_csv(csv2, recs);
    write_report(csv2, (dir / "rep2").string());
    CHECK(slurp(dir / "rep2" / "pivot_epe_tp12_FA5.csv") ==
          slurp(dir / "rep" / "pivot_epe_tp12_FA5.csv"));
    CHECK(slurp(dir / "rep2" / "ranking.csv") == slurp(dir / "rep" / "ranking.csv"));

    // a single record still renders
    write_metrics_csv((dir / "one.csv").string(), {mk_record("solo", 0.5, 0.2)});
    write_report((dir / "one.csv").string(), (dir / "rep_one").string());
    const std::string solo = slurp(dir / "rep_one" / "ranking.csv");
    CHECK(solo.find("1,solo,0.2") != std::string::npos);

    CHECK_THROWS_AS(write_report((dir / "nope.csv").string(), (dir / "r").string()),
                    FormatError);
}

TEST_CASE("raster plotting writes valid portable pixmaps") {
    const fs::path dir = fresh_dir("plot");

    RasterImage im(10, 12);
    im.set(3, 4, 255, 0, 0);
    const std::string p = (dir / "img.ppm").string();
    save_ppm(p, im);
    const std::string bytes = slurp(p);
    CHECK(bytes.rfind("P6\n12 10\n255\n", 0) == 0);
    CHECK(bytes.size() == 13 + 3u * 10 * 12);

    ScalarField2D field(4, 5);
    field.at(0, 0) = -1.0;
    field.at(4, 3) = 3.0;
    RasterImage hm = render_heatmap(field, 2);
    CHECK(hm.h == 8);
    CHECK(hm.w == 10);
    CHECK(hm.rgb[0] == 0);                      // minimum maps to black
    const size_t last = (size_t(7) * 10 + 9) * 3;
    CHECK(hm.rgb[last] == 255);                 // maximum maps to white

    PlotSeries s;
    s.x = {0.0};
    s.y = {1.0};
    RasterImage chart = plot_series({s});
    CHECK(chart.h == 360);
    CHECK(chart.w == 520);
    PlotSeries bad;
    bad.x = {0.0, 1.0};
    bad.y = {1.0};
    CHECK_THROWS_AS(plot_series({bad}), ShapeError);
}
