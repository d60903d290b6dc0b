#pragma once

// Synthetic tagged-sequence generator with known anatomy, tag parameters,
// fading trajectories, and ground-truth Lagrangian motion.

#include <cstdint>
#include <utility>
#include <vector>

#include "brite/fields.hpp"
#include "brite/tagging.hpp"

namespace brite {

/// Seeded phantom anatomy: a handful of randomly placed, rotated, soft-edged
/// filled ellipses on a zero background; values in [0,1].
ScalarField2D gen_oval_anatomy(uint64_t seed, int h, int w,
                               std::pair<int, int> n_ovals_range = {2, 5},
                               std::pair<double, double> intensity_range = {0.35, 1.0},
                               double sx_mm = 1.0, double sy_mm = 1.0);

/// Ground-truth Lagrangian motion: one Diffeo per frame, frame 0 = identity.
struct MotionSequence {
    std::vector<Diffeo> frames;
    std::string kind;

    size_t size() const { return frames.size(); }
};

/// Identity motion for every frame.
MotionSequence static_motion(int h, int w, int T);

/// Cubic B-spline free-form deformation with seeded control-point
/// displacements, scaled linearly from 0 (frame 0) to full (last frame).
/// Control displacements are capped at 0.4·spacing, which keeps every frame
/// diffeomorphic; the inverse is computed by fixed-point iteration.
MotionSequence bspline_deformation(uint64_t seed, int h, int w, int T, double control_spacing_px,
                                   double max_control_disp_px);

/// Rigid rotation whose angle grows linearly from 0 to angle_deg at the last
/// frame; forward and inverse are exact.
MotionSequence rigid_rotation_motion(double angle_deg, std::pair<double, double> center_px, int T,
                                     int h, int w);

/// Translation growing linearly from 0 to (final_dx, final_dy) px.
MotionSequence translation_motion(double final_dx_px, double final_dy_px, int T, int h, int w);

struct SynthesisOpts {
    double noise_sigma{0.01};
    uint64_t noise_seed{0};
};

/// Forward model: g_t = (a ∘ φ_t⁻¹) ⊗ (p̂_t ∘ φ_t⁻¹) for both orientations,
/// with the faded pattern evaluated analytically at φ_t⁻¹(x), then additive
/// Gaussian noise. Ground truth is embedded in the returned sequence.
TaggedSequence synthesize_sequence(const ScalarField2D& anatomy, const TagParams& params,
                                   const FadingParams& fading, const MotionSequence& motion,
                                   const std::vector<double>& times_s,
                                   const SynthesisOpts& opts = {});

/// Midline row of the centered 2D FFT magnitude.
std::vector<double> spectral_profile(const ScalarField2D& image);

/// Pixels where the anatomy exceeds `threshold`, eroded by `erode_px`.
Mask2D foreground_mask(const ScalarField2D& anatomy, double threshold = 0.05, int erode_px = 2);

/// Frame timestamps: T frames spanning [0, duration_s] inclusive.
std::vector<double> frame_times(int T, double duration_s);

} // namespace brite
