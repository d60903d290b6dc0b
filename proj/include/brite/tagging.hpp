#pragma once

// Sinusoidal tag patterns and their temporal fading model.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "brite/fields.hpp"

namespace brite {

/// Parameters of the 1-1 sinusoidal tag pattern. Amplitude A, offset B, and
/// spatial frequency mu (cycles/mm) are shared between the two orientations;
/// each orientation carries its own phase (radians).
struct TagParams {
    double A{0.45};
    double B{0.55};
    double mu{0.0}; // cycles/mm
    double phi_h{0.0};
    double phi_v{0.0};
};

/// Which way the tag lines run. Vertical tag lines modulate intensity along
/// x; horizontal lines modulate along y.
enum class Orientation : uint8_t { Horizontal = 0, Vertical = 1 };

/// Exponential fading of tag amplitude and drift of the intensity offset:
///   A_t = A0 · exp(−t/τ_A),   B_t = B_∞ − (B_∞ − B0) · exp(−t/τ_B).
struct FadingParams {
    double tau_A{0.9}; // s
    double B_inf{0.75};
    double tau_B{0.9}; // s
    std::string preset{"FA5"};

    /// Slow fading (small flip angle).
    static FadingParams fa5() { return {0.9, 0.75, 0.9, "FA5"}; }
    /// Fast fading (larger flip angle, quicker steady-state progression).
    static FadingParams fa10() { return {0.45, 0.85, 0.45, "FA10"}; }
    /// No fading: infinite time constants freeze (A, B) at their t=0 values.
    static FadingParams none();

    static FadingParams by_name(const std::string& name);
};

/// Amplitude and offset at time t (seconds).
std::pair<double, double> fade(const TagParams& params, const FadingParams& fading, double t_s);

/// Pattern value at a physical coordinate (mm) along the modulated axis,
/// clipped at zero (magnitude images cannot go negative).
double tag_value(double A, double B, double mu, double phi, double coord_mm);

/// Full-grid tag pattern. Vertical tags: A·sin(2πμ·x_mm + φ_v) + B with
/// x_mm = x_px·sx; horizontal tags use y and φ_h.
ScalarField2D tag_pattern(const TagParams& params, Orientation orientation, int h, int w,
                          double sx_mm, double sy_mm);

/// Same but with an explicit (A_t, B_t), for faded frames.
ScalarField2D tag_pattern_at(const TagParams& params, Orientation orientation, double A_t,
                             double B_t, int h, int w, double sx_mm, double sy_mm);

/// A two-orientation tagged image sequence with optional ground truth.
struct TaggedSequence {
    std::vector<ScalarField2D> frames_h;
    std::vector<ScalarField2D> frames_v;
    std::vector<double> times_s;
    double tag_period_mm{0.0};
    double sx_mm{1.0};
    double sy_mm{1.0};
    uint64_t seed{0};

    // Ground truth (present when produced by the simulator).
    bool has_truth{false};
    std::vector<Diffeo> gt_motion; // Lagrangian, frame 0 = identity
    ScalarField2D true_anatomy;
    TagParams true_params{};
    FadingParams fading{};

    size_t n_frames() const { return frames_h.size(); }
    int height() const { return frames_h.empty() ? 0 : frames_h[0].h; }
    int width() const { return frames_h.empty() ? 0 : frames_h[0].w; }

    /// Throws unless frame counts/shapes/timestamps satisfy the contract.
    void validate() const;
};

} // namespace brite
