#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "brite/errors.hpp"

namespace brite {

/// Dense H×W scalar grid with physical pixel spacing in mm.
/// Row-major storage, data[y*w + x]; x indexes columns, y rows.
struct ScalarField2D {
    int h{0};
    int w{0};
    double sx_mm{1.0};
    double sy_mm{1.0};
    std::vector<double> data;

    ScalarField2D() = default;
    ScalarField2D(int height, int width, double sx = 1.0, double sy = 1.0, double fill = 0.0);

    double& at(int x, int y) { return data[static_cast<size_t>(y) * w + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return data.size(); }
    bool same_shape(const ScalarField2D& o) const { return h == o.h && w == o.w; }
};

/// Dense H×W field of 2-vectors in pixel units (displacements, velocities).
struct VectorField2D {
    int h{0};
    int w{0};
    double sx_mm{1.0};
    double sy_mm{1.0};
    std::vector<double> dx;
    std::vector<double> dy;

    VectorField2D() = default;
    VectorField2D(int height, int width, double sx = 1.0, double sy = 1.0);

    size_t idx(int x, int y) const { return static_cast<size_t>(y) * w + x; }
    bool same_shape(const VectorField2D& o) const { return h == o.h && w == o.w; }
    bool same_shape(const ScalarField2D& o) const { return h == o.h && w == o.w; }
};

/// Forward/inverse displacement pair of a diffeomorphism, with the number of
/// squaring steps used to integrate it (0 when constructed analytically).
struct Diffeo {
    VectorField2D forward;
    VectorField2D inverse;
    int n_squaring_steps{0};
};

/// Boolean pixel mask (1 = included).
struct Mask2D {
    int h{0};
    int w{0};
    std::vector<uint8_t> on;

    Mask2D() = default;
    Mask2D(int height, int width, uint8_t fill = 0)
        : h(height), w(width), on(static_cast<size_t>(height) * width, fill) {}

    uint8_t& at(int x, int y) { return on[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int x, int y) const { return on[static_cast<size_t>(y) * w + x]; }
    size_t count() const;
};

struct FieldStats {
    double mean{0.0};
    double median{0.0};
    double q1{0.0};
    double q3{0.0};
    size_t n{0};
};

// ---------------------------------------------------------------------------
// Interpolation and warping. Out-of-domain coordinates clamp to the border
// before interpolation.

double bilinear_sample(const ScalarField2D& field, double x, double y);
std::vector<double> bilinear_sample(const ScalarField2D& field,
                                    const std::vector<std::pair<double, double>>& coords);

/// Samples both components of a displacement field at (x, y).
std::pair<double, double> sample_vector(const VectorField2D& field, double x, double y);

/// output(x) = field(x + disp(x)),  i.e. field ∘ (id + disp).
ScalarField2D warp(const ScalarField2D& field, const VectorField2D& disp);

/// Displacement d with (id + d) = (id + d_outer) ∘ (id + d_inner).
VectorField2D compose(const VectorField2D& d_outer, const VectorField2D& d_inner);

/// Integrates a stationary velocity field by scaling and squaring; the
/// inverse comes from integrating the negated velocity.
Diffeo exp_map(const VectorField2D& velocity, int n_steps = 7);

// ---------------------------------------------------------------------------
// Differential quantities. Gradients use central differences in the interior
// and one-sided stencils at the borders, all in pixel units.

/// det(I + ∇d) per pixel.
ScalarField2D jacobian_determinant(const VectorField2D& disp);

/// Largest eigenvalue of the Green-Lagrange strain E = (FᵀF − I)/2 with
/// F = I + ∇d, per pixel. Zero for any rigid motion.
ScalarField2D max_principal_strain(const VectorField2D& disp);

// ---------------------------------------------------------------------------
// Evaluation metrics.

/// Per-pixel Euclidean norm of (d_gt − d_est).
ScalarField2D epe(const VectorField2D& d_gt, const VectorField2D& d_est);

/// Per-pixel |MPS(d_gt) − MPS(d_est)|.
ScalarField2D emps(const VectorField2D& d_gt, const VectorField2D& d_est);

// ---------------------------------------------------------------------------
// Summaries and small utilities.

/// Quartile positions use linear interpolation at q·(n−1) over sorted values.
FieldStats stats_over_mask(const ScalarField2D& field, const Mask2D& mask);
FieldStats stats_all(const ScalarField2D& field);

/// Mask of pixels at least `margin` pixels away from every image border.
Mask2D interior_mask(int h, int w, int margin);

/// Erodes a mask by `radius` pixels (8-neighbourhood, applied iteratively).
Mask2D erode(const Mask2D& mask, int radius);

/// Largest |residual| of compose(forward, inverse) over an interior margin;
/// the round-trip contract check for a Diffeo.
double inverse_consistency_residual(const Diffeo& d, int interior_margin);

/// Fixed-point inverse of a displacement field: returns d_inv with
/// d_inv(x) = −d(x + d_inv(x)). Converges for contractive deformations
/// (max gradient norm < 1); iterates until the update drops below `tol`
/// pixels or `max_iters` passes run out.
VectorField2D invert_displacement(const VectorField2D& disp, int max_iters = 80,
                                  double tol = 1e-7);

double min_over_mask(const ScalarField2D& field, const Mask2D& mask);
double max_abs(const ScalarField2D& field);

/// Pearson correlation of two fields over a mask. Requires at least two
/// selected pixels and nonzero variance in both fields.
double pearson_over_mask(const ScalarField2D& a, const ScalarField2D& b, const Mask2D& mask);

} // namespace brite
