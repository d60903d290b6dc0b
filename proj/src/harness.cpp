#include "brite/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "brite/disentangle.hpp"
#include "brite/errors.hpp"
#include "brite/plot.hpp"
#include "brite/rng.hpp"
#include "brite/sim.hpp"
#include "brite/tagseq_io.hpp"
#include "brite/tracker.hpp"

extern "C" {
extern const char fftw_version[];
}

namespace brite {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string fmt_num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const char* where) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (item.key() == a) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError(std::string(where) + ": unknown field '" + item.key() + "'");
        }
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json motion_to_json(const MotionSuiteConfig& m) {
    return json{{"nonrigid_seeds", m.nonrigid_seeds},
                {"rotation_deg", m.rotation_deg},
                {"include_static", m.include_static},
                {"include_rotation", m.include_rotation},
                {"include_nonrigid", m.include_nonrigid},
                {"bspline_spacing_px", m.bspline_spacing_px},
                {"bspline_max_disp_px", m.bspline_max_disp_px}};
}

void motion_from_json(const json& j, MotionSuiteConfig& m) {
    require_keys(j,
                 {"nonrigid_seeds", "rotation_deg", "include_static", "include_rotation",
                  "include_nonrigid", "bspline_spacing_px", "bspline_max_disp_px"},
                 "motion");
    get_if(j, "nonrigid_seeds", m.nonrigid_seeds);
    get_if(j, "rotation_deg", m.rotation_deg);
    get_if(j, "include_static", m.include_static);
    get_if(j, "include_rotation", m.include_rotation);
    get_if(j, "include_nonrigid", m.include_nonrigid);
    get_if(j, "bspline_spacing_px", m.bspline_spacing_px);
    get_if(j, "bspline_max_disp_px", m.bspline_max_disp_px);
}

json brite_to_json(const BriteMethodOptions& b) {
    return json{{"iterations", b.iterations},
                {"disentangle_iterations", b.disentangle_iterations},
                {"warm_start_fading", b.warm_start_fading},
                {"plateau_rel", b.plateau_rel}};
}

void brite_from_json(const json& j, BriteMethodOptions& b) {
    require_keys(j, {"iterations", "disentangle_iterations", "warm_start_fading", "plateau_rel"},
                 "brite");
    get_if(j, "iterations", b.iterations);
    get_if(j, "disentangle_iterations", b.disentangle_iterations);
    get_if(j, "warm_start_fading", b.warm_start_fading);
    get_if(j, "plateau_rel", b.plateau_rel);
}

json harp_to_json(const HarpOpts& h) {
    return json{{"max_iters", h.max_iters},
                {"step_clamp_px", h.step_clamp_px},
                {"tol_px", h.tol_px},
                {"seed_from_previous", h.seed_from_previous},
                {"min_magnitude", h.min_magnitude}};
}

void harp_from_json(const json& j, HarpOpts& h) {
    require_keys(j, {"max_iters", "step_clamp_px", "tol_px", "seed_from_previous",
                     "min_magnitude"},
                 "harp");
    get_if(j, "max_iters", h.max_iters);
    get_if(j, "step_clamp_px", h.step_clamp_px);
    get_if(j, "tol_px", h.tol_px);
    get_if(j, "seed_from_previous", h.seed_from_previous);
    get_if(j, "min_magnitude", h.min_magnitude);
}

json sinmod_to_json(const SinModOpts& s) {
    return json{{"kernel_size", s.kernel_size},   {"quality_exponent", s.quality_exponent},
                {"freq_floor", s.freq_floor},     {"skew", s.skew},
                {"radius_frac", s.radius_frac},   {"edge_bins", s.edge_bins}};
}

void sinmod_from_json(const json& j, SinModOpts& s) {
    require_keys(j, {"kernel_size", "quality_exponent", "freq_floor", "skew", "radius_frac",
                     "edge_bins"},
                 "sinmod");
    get_if(j, "kernel_size", s.kernel_size);
    get_if(j, "quality_exponent", s.quality_exponent);
    get_if(j, "freq_floor", s.freq_floor);
    get_if(j, "skew", s.skew);
    get_if(j, "radius_frac", s.radius_frac);
    get_if(j, "edge_bins", s.edge_bins);
}

struct CellSpec {
    std::string id;
    double tag_period_mm;
    std::string preset;
    std::string motion_id;
    int nonrigid_index; // 0 when not non-rigid
};

std::vector<CellSpec> grid_cells(const ExperimentConfig& c) {
    std::vector<CellSpec> cells;
    for (const double tp : c.tag_periods_mm) {
        for (const std::string& preset : c.presets) {
            auto add = [&](const std::string& motion_id, int idx) {
                cells.push_back(
                    {"tp" + fmt_g(tp) + "_" + preset + "_" + motion_id, tp, preset, motion_id,
                     idx});
            };
            if (c.motion.include_static) add("static", 0);
            if (c.motion.include_rotation) add("rot" + fmt_g(c.motion.rotation_deg), 0);
            if (c.motion.include_nonrigid) {
                for (int i = 1; i <= c.motion.nonrigid_seeds; ++i) {
                    char mid[32];
                    std::snprintf(mid, sizeof(mid), "nonrigid%02d", i);
                    add(mid, i);
                }
            }
        }
    }
    return cells;
}

MotionSequence cell_motion(const ExperimentConfig& c, const CellSpec& cell, uint64_t cell_seed) {
    const int n = c.grid_size, T = c.n_frames;
    if (cell.motion_id == "static") return static_motion(n, n, T);
    if (cell.nonrigid_index > 0) {
        return bspline_deformation(Rng::derive(cell_seed, 2), n, n, T, c.motion.bspline_spacing_px,
                                   c.motion.bspline_max_disp_px);
    }
    const double cx = (n - 1) / 2.0;
    return rigid_rotation_motion(c.motion.rotation_deg, {cx, cx}, T, n, n);
}

std::vector<VectorField2D> run_method(const std::string& method, const TaggedSequence& seq,
                                      const ExperimentConfig& c, uint64_t cell_seed) {
    if (method == "brite") {
        DisentangleOpts dopts;
        dopts.iterations = c.brite.disentangle_iterations;
        dopts.tag_period_hint_mm = seq.tag_period_mm;
        PixelGridPrior prior(seq.height(), seq.width());
        DisentangleResult dis = disentangle(seq.frames_h[0], seq.frames_v[0], prior, dopts);
        TrackOpts topts = TrackOpts::desk();
        topts.iterations = c.brite.iterations;
        topts.plateau_rel = c.brite.plateau_rel;
        topts.warm_start_fading = c.brite.warm_start_fading;
        topts.seed = Rng::derive(cell_seed, 4);
        LagrangianResult lr = track_sequence(seq, dis, topts);
        std::vector<VectorField2D> est;
        est.reserve(lr.frames.size());
        for (const FrameResult& f : lr.frames) est.push_back(f.phi.forward);
        return est;
    }
    if (method == "harp") {
        const auto sh =
            BandpassSpec::first_harmonic(seq.tag_period_mm, Orientation::Horizontal, seq.sy_mm);
        const auto sv =
            BandpassSpec::first_harmonic(seq.tag_period_mm, Orientation::Vertical, seq.sx_mm);
        return harp_track(seq, sh, sv, c.harp).motion;
    }
    if (method == "sinmod") return sinmod_track(seq, c.sinmod).motion;
    throw ConfigError("unknown method: " + method);
}

/// Linear-interpolated quantile of an unsorted sample (same convention as
/// the per-pixel field statistics).
double quantile_of(std::vector<double> v, double q) {
    if (v.empty()) throw InvalidInput("quantile_of: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return v[lo] + f * (v[hi] - v[lo]);
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    if (grid_size < 8) throw ConfigError("config: grid_size must be at least 8");
    if (n_frames < 1) throw ConfigError("config: n_frames must be at least 1");
    if (!(duration_s > 0.0)) throw ConfigError("config: duration_s must be positive");
    if (!(spacing_mm > 0.0)) throw ConfigError("config: spacing_mm must be positive");
    if (noise_sigma < 0.0) throw ConfigError("config: noise_sigma must be non-negative");
    if (eval_every < 1) throw ConfigError("config: eval_every must be at least 1");
    if (tag_periods_mm.empty()) throw ConfigError("config: tag_periods_mm must not be empty");
    for (const double tp : tag_periods_mm) {
        if (!(tp > 0.0)) throw ConfigError("config: tag periods must be positive");
    }
    if (presets.empty()) throw ConfigError("config: presets must not be empty");
    for (const std::string& p : presets) {
        try {
            (void)FadingParams::by_name(p);
        } catch (const std::exception&) {
            throw ConfigError("config: unknown fading preset '" + p + "'");
        }
    }
    if (methods.empty()) throw ConfigError("config: at least one method is required");
    for (const std::string& m : methods) {
        if (m != "brite" && m != "harp" && m != "sinmod") {
            throw ConfigError("config: unknown method '" + m + "'");
        }
        if (std::count(methods.begin(), methods.end(), m) != 1) {
            throw ConfigError("config: duplicate method '" + m + "'");
        }
    }
    if (!motion.include_static && !motion.include_rotation && !motion.include_nonrigid) {
        throw ConfigError("config: motion suite is empty");
    }
    if (motion.include_nonrigid) {
        if (motion.nonrigid_seeds < 1)
            throw ConfigError("config: nonrigid_seeds must be at least 1");
        if (!(motion.bspline_spacing_px > 0.0) ||
            motion.bspline_max_disp_px > 0.4 * motion.bspline_spacing_px) {
            throw ConfigError(
                "config: bspline_max_disp_px must be <= 0.4 * bspline_spacing_px");
        }
    }
    if (motion.include_rotation && !std::isfinite(motion.rotation_deg)) {
        throw ConfigError("config: rotation_deg must be finite");
    }
    if (brite.iterations < 1 || brite.disentangle_iterations < 1) {
        throw ConfigError("config: tracker iteration counts must be at least 1");
    }
    if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
}

ExperimentConfig ExperimentConfig::desk() {
    ExperimentConfig c;
    c.grid_size = 64;
    c.n_frames = 20;
    c.duration_s = 1.1;
    c.spacing_mm = 2.0;
    c.tag_periods_mm = {18.0};
    c.presets = {"FA5"};
    c.motion.nonrigid_seeds = 1;
    c.methods = {"brite", "harp", "sinmod"};
    c.brite.iterations = 800;
    c.brite.plateau_rel = 1e-4;
    c.eval_every = 5;
    c.out_dir = "out-desk";
    return c;
}

ExperimentConfig ExperimentConfig::paper_scale() {
    ExperimentConfig c;
    c.grid_size = 128;
    c.n_frames = 100;
    c.duration_s = 1.1;
    c.spacing_mm = 2.0;
    c.tag_periods_mm = {9.0, 12.0, 18.0, 26.0};
    c.presets = {"FA5", "FA10"};
    c.motion.nonrigid_seeds = 20;
    c.methods = {"brite", "harp", "sinmod"};
    c.brite.iterations = 2000;
    c.brite.plateau_rel = 1e-6;
    c.eval_every = 5;
    c.out_dir = "out-paper";
    return c;
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["grid_size"] = grid_size;
    j["n_frames"] = n_frames;
    j["duration_s"] = duration_s;
    j["spacing_mm"] = spacing_mm;
    j["tag_periods_mm"] = tag_periods_mm;
    j["presets"] = presets;
    j["motion"] = motion_to_json(motion);
    j["methods"] = methods;
    j["brite"] = brite_to_json(brite);
    j["harp"] = harp_to_json(harp);
    j["sinmod"] = sinmod_to_json(sinmod);
    j["noise_sigma"] = noise_sigma;
    j["eval_every"] = eval_every;
    j["out_dir"] = out_dir;
    j["master_seed"] = master_seed;
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    ExperimentConfig c;
    try {
        require_keys(j,
                     {"grid_size", "n_frames", "duration_s", "spacing_mm", "tag_periods_mm",
                      "presets", "motion", "methods", "brite", "harp", "sinmod", "noise_sigma",
                      "eval_every", "out_dir", "master_seed"},
                     "config");
        get_if(j, "grid_size", c.grid_size);
        get_if(j, "n_frames", c.n_frames);
        get_if(j, "duration_s", c.duration_s);
        get_if(j, "spacing_mm", c.spacing_mm);
        get_if(j, "tag_periods_mm", c.tag_periods_mm);
        get_if(j, "presets", c.presets);
        if (j.contains("motion")) motion_from_json(j.at("motion"), c.motion);
        get_if(j, "methods", c.methods);
        if (j.contains("brite")) brite_from_json(j.at("brite"), c.brite);
        if (j.contains("harp")) harp_from_json(j.at("harp"), c.harp);
        if (j.contains("sinmod")) sinmod_from_json(j.at("sinmod"), c.sinmod);
        get_if(j, "noise_sigma", c.noise_sigma);
        get_if(j, "eval_every", c.eval_every);
        get_if(j, "out_dir", c.out_dir);
        get_if(j, "master_seed", c.master_seed);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// Metrics records and CSV

std::string metrics_csv_header() {
    return "method,tag_period_mm,preset,motion_id,time_s,epe_mean,epe_median,epe_q1,epe_q3,"
           "emps_mean,emps_median,emps_q1,emps_q3,n_px";
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path);
    if (!out) throw FormatError("write_metrics_csv: cannot open " + path);
    out << metrics_csv_header() << "\n";
    for (const MetricsRecord& r : records) {
        out << r.method << ',' << fmt_num(r.tag_period_mm) << ',' << r.preset << ','
            << r.motion_id << ',' << fmt_num(r.time_s) << ',' << fmt_num(r.epe.mean) << ','
            << fmt_num(r.epe.median) << ',' << fmt_num(r.epe.q1) << ',' << fmt_num(r.epe.q3)
            << ',' << fmt_num(r.emps.mean) << ',' << fmt_num(r.emps.median) << ','
            << fmt_num(r.emps.q1) << ',' << fmt_num(r.emps.q3) << ',' << r.epe.n << "\n";
    }
    if (!out) throw FormatError("write_metrics_csv: write failed for " + path);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("read_metrics_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("read_metrics_csv: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != metrics_csv_header()) {
        throw FormatError("read_metrics_csv: unexpected header in " + path);
    }
    std::vector<MetricsRecord> records;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) parts.push_back(cell);
        if (parts.size() != 14) {
            throw FormatError("read_metrics_csv: malformed row " + std::to_string(lineno) +
                              " in " + path);
        }
        try {
            MetricsRecord r;
            r.method = parts[0];
            r.tag_period_mm = std::stod(parts[1]);
            r.preset = parts[2];
            r.motion_id = parts[3];
            r.time_s = std::stod(parts[4]);
            r.epe.mean = std::stod(parts[5]);
            r.epe.median = std::stod(parts[6]);
            r.epe.q1 = std::stod(parts[7]);
            r.epe.q3 = std::stod(parts[8]);
            r.emps.mean = std::stod(parts[9]);
            r.emps.median = std::stod(parts[10]);
            r.emps.q1 = std::stod(parts[11]);
            r.emps.q3 = std::stod(parts[12]);
            r.epe.n = r.emps.n = std::stoull(parts[13]);
            records.push_back(std::move(r));
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FormatError("read_metrics_csv: malformed row " + std::to_string(lineno) +
                              " in " + path);
        }
    }
    return records;
}

std::vector<int> evaluation_frames(int n_frames, int eval_every) {
    if (n_frames < 1) throw InvalidInput("evaluation_frames: need at least one frame");
    if (eval_every < 1) throw InvalidInput("evaluation_frames: eval_every must be >= 1");
    std::vector<int> out;
    for (int t = 0; t < n_frames; t += eval_every) out.push_back(t);
    if (out.back() != n_frames - 1) out.push_back(n_frames - 1);
    return out;
}

std::vector<MetricsRecord> evaluate_tracks(const TaggedSequence& seq,
                                           const std::vector<VectorField2D>& estimated,
                                           const std::string& method_label, int eval_every,
                                           double tag_period_mm, const std::string& preset,
                                           const std::string& motion_id) {
    seq.validate();
    if (!seq.has_truth) throw InvalidInput("evaluate_tracks: sequence carries no ground truth");
    if (estimated.size() != seq.n_frames()) {
        throw ShapeError("evaluate_tracks: estimated frame count differs from sequence");
    }
    const Mask2D fg = foreground_mask(seq.true_anatomy);
    std::vector<MetricsRecord> records;
    for (const int t : evaluation_frames(static_cast<int>(seq.n_frames()), eval_every)) {
        const auto& gt = seq.gt_motion[static_cast<size_t>(t)].forward;
        const auto& est = estimated[static_cast<size_t>(t)];
        MetricsRecord r;
        r.method = method_label;
        r.tag_period_mm = tag_period_mm;
        r.preset = preset;
        r.motion_id = motion_id;
        r.time_s = seq.times_s[static_cast<size_t>(t)];
        r.epe = stats_over_mask(epe(gt, est), fg);
        r.emps = stats_over_mask(emps(gt, est), fg);
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Experiment runner

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    const fs::path out_dir(config.out_dir);
    const fs::path cell_dir = out_dir / "cells";
    std::error_code ec;
    fs::create_directories(cell_dir, ec);
    if (ec) throw ConfigError("run_experiment: cannot create output dir " + cell_dir.string());

    ExperimentResult result;
    json jcells = json::array();

    const int n = config.grid_size;
    const std::vector<double> times = frame_times(config.n_frames, config.duration_s);

    for (const CellSpec& cell : grid_cells(config)) {
        const uint64_t cell_seed = Rng::derive(config.master_seed, fnv1a64(cell.id));
        json jcell;
        jcell["id"] = cell.id;
        jcell["seed"] = cell_seed;

        TagParams params;
        params.mu = 1.0 / cell.tag_period_mm;
        params.phi_h = params.phi_v = 2.0 * M_PI;
        const ScalarField2D anatomy =
            gen_oval_anatomy(Rng::derive(cell_seed, 1), n, n, {2, 5}, {0.35, 1.0},
                             config.spacing_mm, config.spacing_mm);
        const MotionSequence motion = cell_motion(config, cell, cell_seed);
        SynthesisOpts so;
        so.noise_sigma = config.noise_sigma;
        so.noise_seed = Rng::derive(cell_seed, 3);
        TaggedSequence seq = synthesize_sequence(anatomy, params, FadingParams::by_name(cell.preset),
                                                 motion, times, so);
        seq.tag_period_mm = cell.tag_period_mm;
        seq.seed = cell_seed;

        const std::string seq_path = (cell_dir / (cell.id + ".tagseq")).string();
        save_sequence(seq_path, seq);
        jcell["sequence"] = fs::path(seq_path).filename().string();

        json jmethods;
        for (const std::string& method : config.methods) {
            try {
                std::vector<VectorField2D> est = run_method(method, seq, config, cell_seed);
                save_displacement_series(
                    (cell_dir / (cell.id + "." + method + ".motion.tagseq")).string(), est);
                std::vector<MetricsRecord> recs =
                    evaluate_tracks(seq, est, method, config.eval_every, cell.tag_period_mm,
                                    cell.preset, cell.motion_id);
                result.records.insert(result.records.end(), recs.begin(), recs.end());
                jmethods[method] = "ok";
            } catch (const std::exception& e) {
                result.failures.push_back({cell.id, method, e.what()});
                jmethods[method] = std::string("error: ") + e.what();
            }
        }
        jcell["methods"] = jmethods;
        jcells.push_back(jcell);
    }

    result.csv_path = (out_dir / "metrics.csv").string();
    write_metrics_csv(result.csv_path, result.records);

    json manifest;
    manifest["app_version"] = kAppVersion;
    manifest["fftw_version"] = std::string(fftw_version);
    manifest["master_seed"] = config.master_seed;
    manifest["config"] = json::parse(config.to_json_text());
    manifest["cells"] = jcells;
    manifest["n_records"] = result.records.size();
    json jfail = json::array();
    for (const CellFailure& f : result.failures) {
        jfail.push_back({{"cell", f.cell_id}, {"method", f.method}, {"message", f.message}});
    }
    manifest["failures"] = jfail;

    result.manifest_path = (out_dir / "manifest.json").string();
    std::ofstream mf(result.manifest_path);
    if (!mf) throw FormatError("run_experiment: cannot write " + result.manifest_path);
    mf << manifest.dump(2) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// Report

void write_report(const std::string& csv_path, const std::string& out_dir) {
    std::vector<MetricsRecord> records = read_metrics_csv(csv_path);
    if (records.empty()) throw FormatError("report: no records in " + csv_path);

    // Canonical order first: aggregation output is then independent of the
    // order rows appeared in the CSV.
    std::sort(records.begin(), records.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
        return std::tie(a.method, a.tag_period_mm, a.preset, a.motion_id, a.time_s) <
               std::tie(b.method, b.tag_period_mm, b.preset, b.motion_id, b.time_s);
    });

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ConfigError("report: cannot create output dir " + out_dir);

    // group key: (tag period, preset) → method → time → per-cell medians
    using GroupKey = std::pair<double, std::string>;
    struct Agg {
        std::map<std::string, std::map<double, std::vector<double>>> epe, emps;
        std::set<double> times;
        std::set<std::string> methods;
    };
    std::map<GroupKey, Agg> groups;
    for (const MetricsRecord& r : records) {
        Agg& g = groups[{r.tag_period_mm, r.preset}];
        g.epe[r.method][r.time_s].push_back(r.epe.median);
        g.emps[r.method][r.time_s].push_back(r.emps.median);
        g.times.insert(r.time_s);
        g.methods.insert(r.method);
    }

    std::ofstream legend((fs::path(out_dir) / "plots_legend.csv").string());
    if (!legend) throw FormatError("report: cannot write plots legend");
    legend << "plot_file,series_index,method,color_r,color_g,color_b\n";

    for (const auto& [key, g] : groups) {
        const std::string suffix = "tp" + fmt_g(key.first) + "_" + key.second;
        for (const char* metric : {"epe", "emps"}) {
            const auto& table = std::string(metric) == "epe" ? g.epe : g.emps;

            const std::string pivot_path =
                (fs::path(out_dir) / ("pivot_" + std::string(metric) + "_" + suffix + ".csv"))
                    .string();
            std::ofstream pv(pivot_path);
            if (!pv) throw FormatError("report: cannot write " + pivot_path);
            pv << "time_s";
            for (const std::string& m : g.methods) {
                pv << ',' << m << "_median," << m << "_q1," << m << "_q3";
            }
            pv << "\n";
            for (const double t : g.times) {
                pv << fmt_num(t);
                for (const std::string& m : g.methods) {
                    const auto mt = table.find(m);
                    const auto vt = mt == table.end() ? table.end() : mt;
                    if (vt != table.end() && vt->second.count(t)) {
                        const std::vector<double>& vals = vt->second.at(t);
                        pv << ',' << fmt_num(quantile_of(vals, 0.5)) << ','
                           << fmt_num(quantile_of(vals, 0.25)) << ','
                           << fmt_num(quantile_of(vals, 0.75));
                    } else {
                        pv << ",,,";
                    }
                }
                pv << "\n";
            }
            pv.close();

            std::vector<PlotSeries> series;
            const std::string plot_name = "plot_" + std::string(metric) + "_" + suffix + ".ppm";
            size_t mi = 0;
            for (const std::string& m : g.methods) {
                PlotSeries s;
                palette_color(mi, s.r, s.g, s.b);
                const auto mt = table.find(m);
                if (mt != table.end()) {
                    for (const auto& [t, vals] : mt->second) {
                        s.x.push_back(t);
                        s.y.push_back(quantile_of(vals, 0.5));
                    }
                }
                legend << plot_name << ',' << mi << ',' << m << ',' << int(s.r) << ','
                       << int(s.g) << ',' << int(s.b) << "\n";
                series.push_back(std::move(s));
                ++mi;
            }
            save_ppm((fs::path(out_dir) / plot_name).string(), plot_series(series));
        }
    }

    // Final-frame ranking: per method, the median across cells of the
    // final-frame per-cell EPE/eMPS medians.
    std::map<std::string, std::vector<double>> final_epe, final_emps;
    std::map<std::tuple<std::string, double, std::string, std::string>, const MetricsRecord*>
        last_by_cell;
    for (const MetricsRecord& r : records) {
        auto key = std::make_tuple(r.method, r.tag_period_mm, r.preset, r.motion_id);
        auto it = last_by_cell.find(key);
        if (it == last_by_cell.end() || r.time_s > it->second->time_s) last_by_cell[key] = &r;
    }
    for (const auto& [key, rec] : last_by_cell) {
        final_epe[std::get<0>(key)].push_back(rec->epe.median);
        final_emps[std::get<0>(key)].push_back(rec->emps.median);
    }
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [m, vals] : final_epe) order.emplace_back(quantile_of(vals, 0.5), m);
    std::sort(order.begin(), order.end());

    const std::string rank_path = (fs::path(out_dir) / "ranking.csv").string();
    std::ofstream rk(rank_path);
    if (!rk) throw FormatError("report: cannot write " + rank_path);
    rk << "rank,method,final_epe_median,final_emps_median,n_cells\n";
    size_t rank = 1;
    for (const auto& [v, m] : order) {
        rk << rank << ',' << m << ',' << fmt_num(v) << ','
           << fmt_num(quantile_of(final_emps[m], 0.5)) << ',' << final_epe[m].size() << "\n";
        ++rank;
    }
}

} // namespace brite
