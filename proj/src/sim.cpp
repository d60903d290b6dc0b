#include "brite/sim.hpp"

#include <algorithm>
#include <cmath>

#include "brite/fft2d.hpp"
#include "brite/rng.hpp"

namespace brite {

namespace {

// Cubic B-spline basis on t in [0,1).
inline void bspline_basis(double t, double b[4]) {
    const double t2 = t * t, t3 = t2 * t;
    b[0] = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    b[1] = (4 - 6 * t2 + 3 * t3) / 6.0;
    b[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    b[3] = t3 / 6.0;
}

void soft_blur_3x3(ScalarField2D& img) {
    const ScalarField2D src = img;
    static const double k[3] = {0.25, 0.5, 0.25};
    ScalarField2D tmp(src.h, src.w, src.sx_mm, src.sy_mm);
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int o = -1; o <= 1; ++o) {
                const int xx = std::clamp(x + o, 0, src.w - 1);
                acc += k[o + 1] * src.at(xx, y);
            }
            tmp.at(x, y) = acc;
        }
    }
    for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
            double acc = 0.0;
            for (int o = -1; o <= 1; ++o) {
                const int yy = std::clamp(y + o, 0, src.h - 1);
                acc += k[o + 1] * tmp.at(x, yy);
            }
            img.at(x, y) = acc;
        }
    }
}

struct Oval {
    double cx, cy, a, b, cos_r, sin_r, intensity;
};

void stamp(ScalarField2D& img, const Oval& o) {
    const double edge = 0.12; // soft rim as a fraction of the normalized radius
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dx = x - o.cx, dy = y - o.cy;
            const double u = (dx * o.cos_r + dy * o.sin_r) / o.a;
            const double v = (-dx * o.sin_r + dy * o.cos_r) / o.b;
            const double r = std::sqrt(u * u + v * v);
            if (r >= 1.0) continue;
            double w = 1.0;
            if (r > 1.0 - edge) {
                const double t = (1.0 - r) / edge;
                w = t * t * (3.0 - 2.0 * t);
            }
            img.at(x, y) = std::max(img.at(x, y), o.intensity * w);
        }
    }
}

double foreground_fraction(const ScalarField2D& img, double thr = 0.05) {
    size_t n = 0;
    for (double v : img.data)
        if (v > thr) ++n;
    return static_cast<double>(n) / img.data.size();
}

} // namespace

ScalarField2D gen_oval_anatomy(uint64_t seed, int h, int w, std::pair<int, int> n_ovals_range,
                               std::pair<double, double> intensity_range, double sx_mm,
                               double sy_mm) {
    if (h < 32 || w < 32) throw InvalidInput("gen_oval_anatomy: grid must be at least 32x32");
    if (n_ovals_range.first < 0 || n_ovals_range.second < n_ovals_range.first) {
        throw InvalidInput("gen_oval_anatomy: bad oval count range");
    }
    Rng rng(seed);
    ScalarField2D img(h, w, sx_mm, sy_mm);
    const int n =
        n_ovals_range.first + static_cast<int>(rng.below(n_ovals_range.second - n_ovals_range.first + 1));
    const double scale = std::min(h, w);
    auto draw_oval = [&]() {
        Oval o;
        o.cx = rng.uniform(0.22, 0.78) * w;
        o.cy = rng.uniform(0.22, 0.78) * h;
        o.a = rng.uniform(0.10, 0.26) * scale;
        o.b = rng.uniform(0.10, 0.26) * scale;
        const double rot = rng.uniform(0.0, M_PI);
        o.cos_r = std::cos(rot);
        o.sin_r = std::sin(rot);
        o.intensity = rng.uniform(intensity_range.first, intensity_range.second);
        return o;
    };
    for (int i = 0; i < n; ++i) stamp(img, draw_oval());
    // Guarantee a usable foreground when at least one oval was requested:
    // heavily overlapping draws can leave the scene nearly empty.
    if (n > 0) {
        for (int extra = 0; extra < 8 && foreground_fraction(img) < 0.06; ++extra) {
            stamp(img, draw_oval());
        }
    }
    if (n > 0) soft_blur_3x3(img);
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

MotionSequence static_motion(int h, int w, int T) {
    if (T < 1) throw InvalidInput("static_motion: need at least one frame");
    MotionSequence m;
    m.kind = "static";
    m.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
        m.frames.push_back(Diffeo{VectorField2D(h, w), VectorField2D(h, w), 0});
    }
    return m;
}

MotionSequence bspline_deformation(uint64_t seed, int h, int w, int T, double control_spacing_px,
                                   double max_control_disp_px) {
    if (T < 1) throw InvalidInput("bspline_deformation: need at least one frame");
    if (!(control_spacing_px > 0.0)) {
        throw ConfigError("bspline_deformation: control spacing must be positive");
    }
    if (max_control_disp_px > 0.4 * control_spacing_px) {
        throw ConfigError(
            "bspline_deformation: control displacement cap exceeds 0.4x control spacing; "
            "the deformation could fold");
    }
    Rng rng(seed);
    const double s = control_spacing_px;
    const int nc = static_cast<int>(std::floor((w - 1) / s)) + 4;
    const int nr = static_cast<int>(std::floor((h - 1) / s)) + 4;
    std::vector<double> cdx(static_cast<size_t>(nr) * nc), cdy(cdx.size());
    for (size_t i = 0; i < cdx.size(); ++i) {
        cdx[i] = rng.uniform(-max_control_disp_px, max_control_disp_px);
        cdy[i] = rng.uniform(-max_control_disp_px, max_control_disp_px);
    }

    VectorField2D full(h, w);
    for (int y = 0; y < h; ++y) {
        const double v = y / s;
        const int iy = static_cast<int>(std::floor(v));
        double by[4];
        bspline_basis(v - iy, by);
        for (int x = 0; x < w; ++x) {
            const double u = x / s;
            const int ix = static_cast<int>(std::floor(u));
            double bx[4];
            bspline_basis(u - ix, bx);
            double ax = 0.0, ay = 0.0;
            for (int l = 0; l < 4; ++l) {
                const int row = iy + l; // lattice origin offset: control -1 -> index 0
                for (int k = 0; k < 4; ++k) {
                    const int col = ix + k;
                    const double wgt = by[l] * bx[k];
                    ax += wgt * cdx[static_cast<size_t>(row) * nc + col];
                    ay += wgt * cdy[static_cast<size_t>(row) * nc + col];
                }
            }
            full.dx[full.idx(x, y)] = ax;
            full.dy[full.idx(x, y)] = ay;
        }
    }

    MotionSequence m;
    m.kind = "bspline";
    m.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
        const double scale = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        VectorField2D fwd(h, w);
        for (size_t i = 0; i < fwd.dx.size(); ++i) {
            fwd.dx[i] = scale * full.dx[i];
            fwd.dy[i] = scale * full.dy[i];
        }
        VectorField2D inv = invert_displacement(fwd, 80, 1e-7);
        m.frames.push_back(Diffeo{std::move(fwd), std::move(inv), 0});
    }
    return m;
}

MotionSequence rigid_rotation_motion(double angle_deg, std::pair<double, double> center_px, int T,
                                     int h, int w) {
    if (T < 1) throw InvalidInput("rigid_rotation_motion: need at least one frame");
    MotionSequence m;
    m.kind = "rotation";
    m.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        const double rad = angle_deg * frac * M_PI / 180.0;
        const double c = std::cos(rad), s = std::sin(rad);
        VectorField2D fwd(h, w), inv(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double rx = x - center_px.first, ry = y - center_px.second;
                const size_t i = fwd.idx(x, y);
                fwd.dx[i] = c * rx - s * ry - rx;
                fwd.dy[i] = s * rx + c * ry - ry;
                inv.dx[i] = c * rx + s * ry - rx;
                inv.dy[i] = -s * rx + c * ry - ry;
            }
        }
        m.frames.push_back(Diffeo{std::move(fwd), std::move(inv), 0});
    }
    return m;
}

MotionSequence translation_motion(double final_dx_px, double final_dy_px, int T, int h, int w) {
    if (T < 1) throw InvalidInput("translation_motion: need at least one frame");
    MotionSequence m;
    m.kind = "translation";
    m.frames.reserve(T);
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        VectorField2D fwd(h, w), inv(h, w);
        std::fill(fwd.dx.begin(), fwd.dx.end(), frac * final_dx_px);
        std::fill(fwd.dy.begin(), fwd.dy.end(), frac * final_dy_px);
        std::fill(inv.dx.begin(), inv.dx.end(), -frac * final_dx_px);
        std::fill(inv.dy.begin(), inv.dy.end(), -frac * final_dy_px);
        m.frames.push_back(Diffeo{std::move(fwd), std::move(inv), 0});
    }
    return m;
}

TaggedSequence synthesize_sequence(const ScalarField2D& anatomy, const TagParams& params,
                                   const FadingParams& fading, const MotionSequence& motion,
                                   const std::vector<double>& times_s, const SynthesisOpts& opts) {
    if (times_s.empty()) throw InvalidInput("synthesize_sequence: need at least one frame time");
    if (motion.frames.size() != times_s.size()) {
        throw InvalidInput("synthesize_sequence: motion must provide one diffeo per frame");
    }
    for (const Diffeo& d : motion.frames) {
        if (!d.inverse.same_shape(anatomy)) {
            throw ShapeError("synthesize_sequence: inverse motion grid mismatch");
        }
    }
    if (!(params.mu > 0.0)) throw InvalidInput("synthesize_sequence: tag frequency must be positive");

    TaggedSequence seq;
    seq.times_s = times_s;
    seq.tag_period_mm = 1.0 / params.mu;
    seq.sx_mm = anatomy.sx_mm;
    seq.sy_mm = anatomy.sy_mm;
    seq.seed = opts.noise_seed;
    seq.has_truth = true;
    seq.gt_motion = motion.frames;
    seq.true_anatomy = anatomy;
    seq.true_params = params;
    seq.fading = fading;

    const int h = anatomy.h, w = anatomy.w;
    for (size_t t = 0; t < times_s.size(); ++t) {
        const auto [a_t, b_t] = fade(params, fading, times_s[t]);
        const VectorField2D& dinv = motion.frames[t].inverse;
        ScalarField2D warped = warp(anatomy, dinv);
        ScalarField2D gh(h, w, anatomy.sx_mm, anatomy.sy_mm);
        ScalarField2D gv(h, w, anatomy.sx_mm, anatomy.sy_mm);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = dinv.idx(x, y);
                const double mx = (x + dinv.dx[i]) * anatomy.sx_mm;
                const double my = (y + dinv.dy[i]) * anatomy.sy_mm;
                gv.data[i] = warped.data[i] * tag_value(a_t, b_t, params.mu, params.phi_v, mx);
                gh.data[i] = warped.data[i] * tag_value(a_t, b_t, params.mu, params.phi_h, my);
            }
        }
        if (opts.noise_sigma > 0.0) {
            Rng noise(Rng::derive(opts.noise_seed, 0x5eed0000u + static_cast<uint64_t>(t)));
            for (double& v : gh.data) v += opts.noise_sigma * noise.normal();
            for (double& v : gv.data) v += opts.noise_sigma * noise.normal();
        }
        seq.frames_h.push_back(std::move(gh));
        seq.frames_v.push_back(std::move(gv));
    }
    seq.validate();
    return seq;
}

std::vector<double> spectral_profile(const ScalarField2D& image) {
    ScalarField2D mag = fft_magnitude_centered(image);
    std::vector<double> out(mag.w);
    const int mid = mag.h / 2;
    for (int x = 0; x < mag.w; ++x) out[x] = mag.at(x, mid);
    return out;
}

Mask2D foreground_mask(const ScalarField2D& anatomy, double threshold, int erode_px) {
    Mask2D m(anatomy.h, anatomy.w);
    for (size_t i = 0; i < anatomy.data.size(); ++i) m.on[i] = anatomy.data[i] > threshold ? 1 : 0;
    return erode_px > 0 ? erode(m, erode_px) : m;
}

std::vector<double> frame_times(int T, double duration_s) {
    if (T < 1) throw InvalidInput("frame_times: need at least one frame");
    std::vector<double> t(T, 0.0);
    for (int k = 1; k < T; ++k) t[k] = duration_s * k / (T - 1);
    return t;
}

} // namespace brite
