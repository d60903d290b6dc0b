#pragma once

// Lagrangian motion estimation for tagged sequences: a per-frame coordinate
// network produces a stationary velocity field whose exponential map is the
// frame's diffeomorphic deformation; the network, jointly with a learnable
// amplitude/offset pair, is fit by minimizing the reconstruction error of the
// tagged observations against the disentangled reference. Networks are
// warm-started from frame to frame, and a dedicated frame-0 pass absorbs any
// deformation that occurred between tag application and the first image.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "brite/autodiff.hpp"
#include "brite/disentangle.hpp"
#include "brite/fields.hpp"
#include "brite/tagging.hpp"

namespace brite {

/// Coordinate network: 2 normalized inputs -> 3 tanh hidden layers of 128 ->
/// 2 outputs (velocity in px). The output layer starts at exactly zero so an
/// untrained net is the identity deformation.
struct VelocityNet {
    static constexpr int kHidden = 128;

    ad::Param w1, b1, w2, b2, w3, b3, wo, bo;

    VelocityNet();
    /// Seeded hidden-layer init (uniform Xavier); output layer zeroed.
    void init(uint64_t seed);
    /// [n,2] px velocity from [n,2] coordinates in [-1,1]^2.
    ad::Tensor forward(ad::Graph& g, ad::Tensor coords_norm);
    std::vector<ad::Param*> params();
};

/// Learnable per-frame tag fading: amplitude A_t (kept nonnegative through a
/// softplus reparameterization) and offset B_t, both starting at 0.5.
struct FadingState {
    ad::Param raw_a{1, 1};
    ad::Param raw_b{1, 1};

    FadingState();
    double amplitude() const; // A_t = softplus(raw_a)
    double offset() const;    // B_t
};

/// One tracked frame: the deformation (both directions), the fitted fading,
/// the best reconstruction loss, and the model images at that iterate.
struct FrameResult {
    Diffeo phi;         // Lagrangian: reference frame -> this frame
    double fading_amplitude{0.0};
    double fading_offset{0.0};
    double loss{0.0};
    int iterations_run{0};
    std::vector<double> best_loss_trajectory; // running minimum, one per iteration
    ScalarField2D recon_h, recon_v;      // model tagged images
    ScalarField2D anatomy_warped;        // anatomy at this frame
    ScalarField2D pattern_h, pattern_v;  // faded, deformed tag patterns
};

/// Full-sequence result. frames.size() equals the sequence length; frame 0
/// carries the identity deformation (it is the reference). pre_imaging is the
/// deformation between tag application and frame 0.
struct LagrangianResult {
    std::vector<FrameResult> frames;
    Diffeo pre_imaging;
    ScalarField2D reference_anatomy; // after pre-imaging substitution
    TagParams params;                // frozen pattern parameters
    double sx_mm{1.0};
    double sy_mm{1.0};
    std::vector<double> times_s;
};

struct TrackOpts {
    int iterations{2000};
    double lr_net{1e-4};
    double lr_fading{5e-2};
    int n_squaring{7};
    /// Stop once the best loss improves by less than plateau_rel (relative)
    /// over plateau_window iterations.
    bool early_stop{true};
    int plateau_window{200};
    double plateau_rel{1e-6};
    /// Carry (A_t, B_t) from the previous frame instead of re-initializing
    /// them to 0.5 each frame.
    bool warm_start_fading{false};
    uint64_t seed{0};
    /// Optional loss restriction (1 = pixel contributes). Off by default: the
    /// reconstruction error is taken over the whole image.
    const Mask2D* loss_mask{nullptr};

    /// Reduced iteration cap for quick desk-scale runs.
    static TrackOpts desk();
};

/// Reference data a frame is reconstructed from: the anatomy image (already
/// resampled through the pre-imaging deformation once one is known), the
/// frozen tag parameters, and optionally the pre-imaging inverse displacement
/// for analytic pattern evaluation.
struct TrackRefs {
    ScalarField2D anatomy;
    TagParams params;
    const VectorField2D* pre_inverse{nullptr};
};

/// Evaluates the net at every pixel's normalized coordinate; px units.
VectorField2D velocity_field(VelocityNet& net, int h, int w);

/// Model images for one frame: anatomy warped by phi_inv (after the
/// pre-imaging substitution), times the analytically evaluated faded pattern.
/// Returns (g_h, g_v). Throws InvalidInput when the reference is unusable
/// (empty anatomy or non-positive tag frequency).
std::pair<ScalarField2D, ScalarField2D> reconstruct_frame(const ScalarField2D& a0,
                                                          const TagParams& params,
                                                          const FadingState& fading,
                                                          const VectorField2D& phi_inv,
                                                          const VectorField2D* pre_inverse = nullptr);

/// Fits net + fading to one frame's pair of tagged observations by Adam on
/// the summed squared reconstruction error. The net is updated in place (this
/// is the warm-start chain); the returned result is the best-loss iterate.
FrameResult track_frame(VelocityNet& net, FadingState& fading, const ScalarField2D& g_h,
                        const ScalarField2D& g_v, const TrackRefs& refs, const TrackOpts& opts);

/// Whole-sequence tracking: frame 0 is tracked first to estimate the
/// pre-imaging deformation, the reference anatomy/pattern are resampled
/// through it, then frames 1..T-1 are tracked with warm starts. Frame t's
/// deformation maps the reference frame to frame t.
LagrangianResult track_sequence(const TaggedSequence& seq, const DisentangleResult& dis,
                                const TrackOpts& opts);

/// Writes <prefix>.motion_fwd.tagseq / <prefix>.motion_inv.tagseq plus
/// <prefix>.track.json holding per-frame (A_t, B_t, loss) and timing data.
void save_lagrangian_result(const LagrangianResult& result, const std::string& prefix);

} // namespace brite
