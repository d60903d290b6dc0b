#pragma once

// Fourier-domain reference trackers: harmonic-phase (HARP) tracking and
// SinMod. Both isolate one spectral peak of the tag pattern with a band-pass
// filter and turn its phase into displacement; they are the standard methods
// the learned tracker is compared against, in particular under tag fading
// and spectral overlap.

#include <cstdint>
#include <utility>
#include <vector>

#include "brite/fields.hpp"
#include "brite/tagging.hpp"

namespace brite {

/// One-sided spectral window: a hard disk centered on a harmonic peak with a
/// raised-cosine edge. Frequencies are in cycles/px on the image grid.
/// A center magnitude smaller than the radius is allowed (the window then
/// overlaps DC — spectral overlap is the phenomenon under study).
struct BandpassSpec {
    double cx{0.0};        ///< center frequency along x (cycles/px)
    double cy{0.0};        ///< center frequency along y (cycles/px)
    double radius{0.0};    ///< disk radius (cycles/px); must be > 0
    double edge_bins{2.0}; ///< raised-cosine edge width, in frequency bins

    /// Window for the first harmonic of a tag pattern: centered on the
    /// positive peak, radius = half the tag frequency.
    ///   - vertical tag lines modulate along x: peak at (f, 0)
    ///   - horizontal tag lines modulate along y: peak at (0, f)
    /// where f = spacing_mm / tag_period_mm cycles/px.
    static BandpassSpec first_harmonic(double tag_period_mm, Orientation orientation,
                                       double spacing_mm);
};

/// Complex band-pass output: wrapped phase in (−π, π] plus per-pixel
/// magnitude, usable as a quality weight.
struct PhaseImage {
    ScalarField2D phase;
    ScalarField2D magnitude;
};

/// Band-pass an image around +center only (no conjugate peak) and return the
/// phase/magnitude of the resulting complex image. The filter is applied in
/// the Fourier domain; a one-sided window makes the output analytic, so its
/// phase advances linearly across the tags.
PhaseImage harp_phase(const ScalarField2D& image, const BandpassSpec& spec);

/// Shared result shape for the reference trackers: Lagrangian displacement
/// per frame (frame 0 = identity) and a per-frame validity mask (pixels
/// where the estimate diverged or was flagged low-quality are 0 and have
/// been filled from their neighborhood).
struct BaselineTrack {
    std::vector<VectorField2D> motion;
    std::vector<Mask2D> valid;
};

struct HarpOpts {
    int max_iters{30};          ///< Newton iteration cap per pixel
    double step_clamp_px{1.0};  ///< max Newton step length per iteration
    double tol_px{1e-3};        ///< convergence threshold on the step length
    bool seed_from_previous{true}; ///< start Newton from the previous frame's solution
    double min_magnitude{1e-6}; ///< below this harmonic magnitude a pixel is flagged
};

/// Harmonic-phase tracking: the wrapped phase pair (Φ_h, Φ_v) is a material
/// property, so each frame-0 pixel is tracked to the point in frame t with
/// the same pair, via damped Newton on the wrapped phase differences. Pixels
/// with a singular phase-gradient matrix or no convergence are flagged and
/// filled with the median of nearby valid estimates.
BaselineTrack harp_track(const TaggedSequence& seq, const BandpassSpec& spec_h,
                         const BandpassSpec& spec_v, const HarpOpts& opts = {});

struct SinModOpts {
    int kernel_size{15};         ///< squared-cosine smoothing kernel width (odd)
    double quality_exponent{8.0}; ///< power applied to the quality weight
    double freq_floor{1e-4};     ///< cycles/px; below → pixel flagged low-quality
    double skew{0.75};           ///< relative tilt of the low/high band-pass pair
    double radius_frac{0.5};     ///< band radius as a fraction of the tag frequency
    double edge_bins{2.0};       ///< raised-cosine edge width of the band windows
};

/// SinMod tracking: per orientation, the image is band-passed by two skewed
/// windows (one emphasizing frequencies below the tag peak, one above); the
/// power ratio of the two responses yields the local spatial frequency, and
/// displacement between adjacent frames is phase difference / local
/// frequency. Adjacent-frame fields are composed into Lagrangian fields.
BaselineTrack sinmod_track(const TaggedSequence& seq, const SinModOpts& opts = {});

/// Local-frequency estimate (cycles/px along the modulated axis) from the
/// skewed-filter power ratio; exposed for validation against analytic
/// sinusoids. Returns the estimate plus a quality weight per pixel.
std::pair<ScalarField2D, ScalarField2D> sinmod_local_frequency(const ScalarField2D& image,
                                                               Orientation orientation,
                                                               double tag_freq_cyc_px,
                                                               const SinModOpts& opts = {});

} // namespace brite
