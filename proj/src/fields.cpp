#include "brite/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace brite {

namespace {

void require_same_shape(const VectorField2D& a, const VectorField2D& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": field shapes differ");
    }
}

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Shared bilinear kernel over a raw row-major plane.
double sample_plane(const double* p, int h, int w, double x, double y) {
    x = clampd(x, 0.0, static_cast<double>(w - 1));
    y = clampd(y, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = p[y0 * w + x0] + fx * (p[y0 * w + x1] - p[y0 * w + x0]);
    const double bot = p[y1 * w + x0] + fx * (p[y1 * w + x1] - p[y1 * w + x0]);
    return top + fy * (bot - top);
}

// d/dx and d/dy of a plane: central interior, one-sided at borders.
inline double ddx(const std::vector<double>& p, int w, int x, int y) {
    const size_t row = static_cast<size_t>(y) * w;
    if (x == 0) return p[row + 1] - p[row];
    if (x == w - 1) return p[row + w - 1] - p[row + w - 2];
    return 0.5 * (p[row + x + 1] - p[row + x - 1]);
}

inline double ddy(const std::vector<double>& p, int h, int w, int x, int y) {
    if (y == 0) return p[static_cast<size_t>(w) + x] - p[x];
    if (y == h - 1)
        return p[static_cast<size_t>(h - 1) * w + x] - p[static_cast<size_t>(h - 2) * w + x];
    return 0.5 * (p[static_cast<size_t>(y + 1) * w + x] - p[static_cast<size_t>(y - 1) * w + x]);
}

double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return 0.0;
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return v[lo] + f * (v[hi] - v[lo]);
}

FieldStats stats_of_values(std::vector<double>& vals) {
    FieldStats s;
    s.n = vals.size();
    if (vals.empty()) return s;
    s.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    std::sort(vals.begin(), vals.end());
    s.q1 = quantile_sorted(vals, 0.25);
    s.median = quantile_sorted(vals, 0.5);
    s.q3 = quantile_sorted(vals, 0.75);
    return s;
}

} // namespace

ScalarField2D::ScalarField2D(int height, int width, double sx, double sy, double fill)
    : h(height), w(width), sx_mm(sx), sy_mm(sy),
      data(static_cast<size_t>(height) * width, fill) {
    if (height < 2 || width < 2) throw InvalidInput("ScalarField2D: grid must be at least 2x2");
    if (!(sx > 0.0) || !(sy > 0.0)) throw InvalidInput("ScalarField2D: spacing must be positive");
}

VectorField2D::VectorField2D(int height, int width, double sx, double sy)
    : h(height), w(width), sx_mm(sx), sy_mm(sy),
      dx(static_cast<size_t>(height) * width, 0.0),
      dy(static_cast<size_t>(height) * width, 0.0) {
    if (height < 2 || width < 2) throw InvalidInput("VectorField2D: grid must be at least 2x2");
}

size_t Mask2D::count() const {
    size_t n = 0;
    for (uint8_t v : on) n += (v != 0);
    return n;
}

double bilinear_sample(const ScalarField2D& field, double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
        throw InvalidInput("bilinear_sample: non-finite coordinate");
    }
    return sample_plane(field.data.data(), field.h, field.w, x, y);
}

std::vector<double> bilinear_sample(const ScalarField2D& field,
                                    const std::vector<std::pair<double, double>>& coords) {
    std::vector<double> out;
    out.reserve(coords.size());
    for (const auto& [x, y] : coords) out.push_back(bilinear_sample(field, x, y));
    return out;
}

std::pair<double, double> sample_vector(const VectorField2D& field, double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
        throw InvalidInput("sample_vector: non-finite coordinate");
    }
    return {sample_plane(field.dx.data(), field.h, field.w, x, y),
            sample_plane(field.dy.data(), field.h, field.w, x, y)};
}

ScalarField2D warp(const ScalarField2D& field, const VectorField2D& disp) {
    if (!disp.same_shape(field)) throw ShapeError("warp: field and displacement shapes differ");
    ScalarField2D out(field.h, field.w, field.sx_mm, field.sy_mm);
    for (int y = 0; y < field.h; ++y) {
        for (int x = 0; x < field.w; ++x) {
            const size_t i = disp.idx(x, y);
            out.data[i] = sample_plane(field.data.data(), field.h, field.w,
                                       x + disp.dx[i], y + disp.dy[i]);
        }
    }
    return out;
}

VectorField2D compose(const VectorField2D& d_outer, const VectorField2D& d_inner) {
    require_same_shape(d_outer, d_inner, "compose");
    VectorField2D out(d_outer.h, d_outer.w, d_outer.sx_mm, d_outer.sy_mm);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            const size_t i = out.idx(x, y);
            const double px = x + d_inner.dx[i];
            const double py = y + d_inner.dy[i];
            out.dx[i] = d_inner.dx[i] + sample_plane(d_outer.dx.data(), out.h, out.w, px, py);
            out.dy[i] = d_inner.dy[i] + sample_plane(d_outer.dy.data(), out.h, out.w, px, py);
        }
    }
    return out;
}

Diffeo exp_map(const VectorField2D& velocity, int n_steps) {
    if (n_steps < 1) throw InvalidInput("exp_map: n_steps must be >= 1");
    for (size_t i = 0; i < velocity.dx.size(); ++i) {
        if (!std::isfinite(velocity.dx[i]) || !std::isfinite(velocity.dy[i])) {
            throw InvalidInput("exp_map: non-finite velocity");
        }
    }
    const double scale = 1.0 / static_cast<double>(1ULL << n_steps);
    auto integrate = [&](double sign) {
        VectorField2D d(velocity.h, velocity.w, velocity.sx_mm, velocity.sy_mm);
        for (size_t i = 0; i < d.dx.size(); ++i) {
            d.dx[i] = sign * velocity.dx[i] * scale;
            d.dy[i] = sign * velocity.dy[i] * scale;
        }
        for (int k = 0; k < n_steps; ++k) d = compose(d, d);
        return d;
    };
    Diffeo out;
    out.forward = integrate(1.0);
    out.inverse = integrate(-1.0);
    out.n_squaring_steps = n_steps;
    return out;
}

ScalarField2D jacobian_determinant(const VectorField2D& disp) {
    ScalarField2D out(disp.h, disp.w, disp.sx_mm, disp.sy_mm);
    for (int y = 0; y < disp.h; ++y) {
        for (int x = 0; x < disp.w; ++x) {
            const double fxx = 1.0 + ddx(disp.dx, disp.w, x, y);
            const double fxy = ddy(disp.dx, disp.h, disp.w, x, y);
            const double fyx = ddx(disp.dy, disp.w, x, y);
            const double fyy = 1.0 + ddy(disp.dy, disp.h, disp.w, x, y);
            out.at(x, y) = fxx * fyy - fxy * fyx;
        }
    }
    return out;
}

ScalarField2D max_principal_strain(const VectorField2D& disp) {
    ScalarField2D out(disp.h, disp.w, disp.sx_mm, disp.sy_mm);
    for (int y = 0; y < disp.h; ++y) {
        for (int x = 0; x < disp.w; ++x) {
            const double fxx = 1.0 + ddx(disp.dx, disp.w, x, y);
            const double fxy = ddy(disp.dx, disp.h, disp.w, x, y);
            const double fyx = ddx(disp.dy, disp.w, x, y);
            const double fyy = 1.0 + ddy(disp.dy, disp.h, disp.w, x, y);
            // E = (FᵀF − I)/2, symmetric 2x2.
            const double exx = 0.5 * (fxx * fxx + fyx * fyx - 1.0);
            const double eyy = 0.5 * (fxy * fxy + fyy * fyy - 1.0);
            const double exy = 0.5 * (fxx * fxy + fyx * fyy);
            const double mid = 0.5 * (exx + eyy);
            const double rad = std::sqrt(0.25 * (exx - eyy) * (exx - eyy) + exy * exy);
            out.at(x, y) = mid + rad;
        }
    }
    return out;
}

ScalarField2D epe(const VectorField2D& d_gt, const VectorField2D& d_est) {
    require_same_shape(d_gt, d_est, "epe");
    ScalarField2D out(d_gt.h, d_gt.w, d_gt.sx_mm, d_gt.sy_mm);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double ex = d_gt.dx[i] - d_est.dx[i];
        const double ey = d_gt.dy[i] - d_est.dy[i];
        out.data[i] = std::sqrt(ex * ex + ey * ey);
    }
    return out;
}

ScalarField2D emps(const VectorField2D& d_gt, const VectorField2D& d_est) {
    require_same_shape(d_gt, d_est, "emps");
    const ScalarField2D a = max_principal_strain(d_gt);
    const ScalarField2D b = max_principal_strain(d_est);
    ScalarField2D out(d_gt.h, d_gt.w, d_gt.sx_mm, d_gt.sy_mm);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::fabs(a.data[i] - b.data[i]);
    return out;
}

FieldStats stats_over_mask(const ScalarField2D& field, const Mask2D& mask) {
    if (field.h != mask.h || field.w != mask.w) {
        throw ShapeError("stats_over_mask: mask shape differs from field");
    }
    std::vector<double> vals;
    vals.reserve(field.size());
    for (size_t i = 0; i < field.data.size(); ++i) {
        if (mask.on[i]) vals.push_back(field.data[i]);
    }
    if (vals.empty()) throw InvalidInput("stats_over_mask: mask selects no pixels");
    return stats_of_values(vals);
}

FieldStats stats_all(const ScalarField2D& field) {
    std::vector<double> vals = field.data;
    return stats_of_values(vals);
}

Mask2D interior_mask(int h, int w, int margin) {
    Mask2D m(h, w, 0);
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) m.at(x, y) = 1;
    }
    return m;
}

Mask2D erode(const Mask2D& mask, int radius) {
    Mask2D cur = mask;
    for (int it = 0; it < radius; ++it) {
        Mask2D next(mask.h, mask.w, 0);
        for (int y = 0; y < mask.h; ++y) {
            for (int x = 0; x < mask.w; ++x) {
                if (!cur.at(x, y)) continue;
                bool keep = true;
                for (int oy = -1; oy <= 1 && keep; ++oy) {
                    for (int ox = -1; ox <= 1; ox++) {
                        const int nx = x + ox;
                        const int ny = y + oy;
                        if (nx < 0 || ny < 0 || nx >= mask.w || ny >= mask.h || !cur.at(nx, ny)) {
                            keep = false;
                            break;
                        }
                    }
                }
                next.at(x, y) = keep ? 1 : 0;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

double inverse_consistency_residual(const Diffeo& d, int interior_margin) {
    const VectorField2D round_trip = compose(d.forward, d.inverse);
    double worst = 0.0;
    for (int y = interior_margin; y < d.forward.h - interior_margin; ++y) {
        for (int x = interior_margin; x < d.forward.w - interior_margin; ++x) {
            const size_t i = round_trip.idx(x, y);
            worst = std::max(worst, std::hypot(round_trip.dx[i], round_trip.dy[i]));
        }
    }
    return worst;
}

VectorField2D invert_displacement(const VectorField2D& disp, int max_iters, double tol) {
    VectorField2D inv(disp.h, disp.w, disp.sx_mm, disp.sy_mm);
    for (int it = 0; it < max_iters; ++it) {
        double worst_step = 0.0;
        for (int y = 0; y < disp.h; ++y) {
            for (int x = 0; x < disp.w; ++x) {
                const size_t i = inv.idx(x, y);
                const auto [sx, sy] = sample_vector(disp, x + inv.dx[i], y + inv.dy[i]);
                const double nx = -sx, ny = -sy;
                worst_step = std::max(worst_step,
                                      std::max(std::abs(nx - inv.dx[i]), std::abs(ny - inv.dy[i])));
                inv.dx[i] = nx;
                inv.dy[i] = ny;
            }
        }
        if (worst_step < tol) break;
    }
    return inv;
}

double min_over_mask(const ScalarField2D& field, const Mask2D& mask) {
    double lo = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < field.data.size(); ++i) {
        if (mask.on[i]) lo = std::min(lo, field.data[i]);
    }
    return lo;
}

double max_abs(const ScalarField2D& field) {
    double hi = 0.0;
    for (double v : field.data) hi = std::max(hi, std::fabs(v));
    return hi;
}

double pearson_over_mask(const ScalarField2D& a, const ScalarField2D& b, const Mask2D& mask) {
    if (!a.same_shape(b) || a.h != mask.h || a.w != mask.w) {
        throw ShapeError("pearson_over_mask: shape mismatch");
    }
    double sa = 0.0, sb = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        if (!mask.on[i]) continue;
        sa += a.data[i];
        sb += b.data[i];
        ++n;
    }
    if (n < 2) throw InvalidInput("pearson_over_mask: fewer than two pixels selected");
    const double ma = sa / n, mb = sb / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        if (!mask.on[i]) continue;
        const double da = a.data[i] - ma, db = b.data[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    // Guard against effectively-constant fields, where accumulated rounding
    // noise would masquerade as variance.
    const double floor_a = 1e-20 * n * std::max(1.0, ma * ma);
    const double floor_b = 1e-20 * n * std::max(1.0, mb * mb);
    if (va <= floor_a || vb <= floor_b) {
        throw NumericError("pearson_over_mask: zero variance over the mask");
    }
    return cov / std::sqrt(va * vb);
}

} // namespace brite
