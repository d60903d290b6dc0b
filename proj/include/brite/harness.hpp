#pragma once

// Experiment orchestration: the tag-period × fading-preset × motion grid,
// method execution with per-cell fault isolation, EPE/eMPS aggregation over
// the true-anatomy foreground, CSV/manifest emission, and report rendering.

#include <cstdint>
#include <string>
#include <vector>

#include "brite/baselines.hpp"
#include "brite/fields.hpp"
#include "brite/tagging.hpp"

namespace brite {

inline constexpr const char* kAppVersion = "1.0.0";

/// Which motions make up the grid. Non-rigid cells draw one seed each from
/// the master seed; rotation and static contribute one cell apiece.
struct MotionSuiteConfig {
    int nonrigid_seeds{20};
    double rotation_deg{15.0};
    bool include_static{true};
    bool include_rotation{true};
    bool include_nonrigid{true};
    double bspline_spacing_px{12.0};
    double bspline_max_disp_px{3.5};
};

/// Options for the learned tracker when run by the harness.
struct BriteMethodOptions {
    int iterations{2000};
    int disentangle_iterations{600};
    bool warm_start_fading{false};
    double plateau_rel{1e-4}; ///< early-stop threshold; see TrackOpts
};

struct ExperimentConfig {
    int grid_size{64};
    int n_frames{20};
    double duration_s{1.1};
    double spacing_mm{2.0};
    std::vector<double> tag_periods_mm{9.0, 12.0, 18.0, 26.0};
    std::vector<std::string> presets{"FA5", "FA10"};
    MotionSuiteConfig motion;
    std::vector<std::string> methods{"brite", "harp", "sinmod"};
    BriteMethodOptions brite;
    HarpOpts harp;
    SinModOpts sinmod;
    double noise_sigma{0.01};
    int eval_every{5};
    std::string out_dir{"out"};
    uint64_t master_seed{1234};

    /// Throws ConfigError on out-of-contract values (no methods, bad tag
    /// periods, unknown method/preset names, non-positive sizes).
    void validate() const;

    /// Small grid sized for a workstation: one tag period/preset, three
    /// motions, reduced tracker iteration cap.
    static ExperimentConfig desk();
    /// Full grid mirroring the source acquisition geometry (128×128, 2 mm,
    /// 100 frames, 20 non-rigid seeds). Orders of magnitude slower.
    static ExperimentConfig paper_scale();

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_json_file(const std::string& path);
    std::string to_json_text() const; // field names mirror the struct exactly
};

/// Per-frame evaluation statistics for one method on one grid cell.
struct MetricsRecord {
    std::string method;
    double tag_period_mm{0.0};
    std::string preset;
    std::string motion_id;
    double time_s{0.0};
    FieldStats epe;  // over the true-anatomy foreground
    FieldStats emps; // same mask
};

struct CellFailure {
    std::string cell_id;
    std::string method;
    std::string message;
};

struct ExperimentResult {
    std::vector<MetricsRecord> records;
    std::vector<CellFailure> failures;
    std::string csv_path;
    std::string manifest_path;
};

/// Exact header line of metrics.csv.
std::string metrics_csv_header();

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
/// Throws FormatError on malformed headers or rows.
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

/// Frame indices evaluated for metrics: every `eval_every`-th frame plus the
/// final frame, in increasing order.
std::vector<int> evaluation_frames(int n_frames, int eval_every);

/// Per-frame EPE/eMPS records for an estimated Lagrangian displacement
/// series against the sequence's embedded ground truth, over the
/// true-anatomy foreground. Throws InvalidInput when truth is missing.
std::vector<MetricsRecord> evaluate_tracks(const TaggedSequence& seq,
                                           const std::vector<VectorField2D>& estimated,
                                           const std::string& method_label, int eval_every,
                                           double tag_period_mm, const std::string& preset,
                                           const std::string& motion_id);

/// Runs the full grid: simulate each cell, run each method inside a
/// try/catch, append records, and write metrics.csv plus a timestamp-free
/// manifest.json into config.out_dir. Deterministic for a fixed config.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Pivot tables (per tag period × preset: metric medians/IQR vs. time per
/// method), raster plots of the same curves, and a final-frame ranking
/// table, all written into out_dir. Aggregation sorts records first, so the
/// output is invariant to record order.
void write_report(const std::string& csv_path, const std::string& out_dir);

} // namespace brite
