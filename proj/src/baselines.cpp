#include "brite/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "brite/errors.hpp"
#include "brite/fft2d.hpp"

namespace brite {

namespace {

using cplx = std::complex<double>;

/// Signed frequency (cycles/px) of DFT bin k along an axis of length n.
double signed_bin_freq(int k, int n) {
    return (k <= n / 2) ? static_cast<double>(k) / n : static_cast<double>(k - n) / n;
}

/// Raised-cosine disk profile: 1 on the plateau, cos² rolloff over the last
/// `edge` of the radius, 0 outside.
double disk_weight(double dist, double radius, double edge) {
    if (dist >= radius) return 0.0;
    const double e = std::min(std::max(edge, 0.0), radius);
    const double flat = radius - e;
    if (dist <= flat || e == 0.0) return 1.0;
    const double c = std::cos(0.5 * M_PI * (dist - flat) / e);
    return c * c;
}

void check_image(const ScalarField2D& image, const char* who) {
    if (image.h < 2 || image.w < 2)
        throw InvalidInput(std::string(who) + ": image must be at least 2x2");
}

void check_spec(const BandpassSpec& spec, const char* who) {
    if (!(spec.radius > 0.0)) throw InvalidInput(std::string(who) + ": band radius must be > 0");
    if (spec.edge_bins < 0.0)
        throw InvalidInput(std::string(who) + ": edge width must be non-negative");
}

/// FFT → multiply by the one-sided window at +center → inverse FFT.
ComplexImage bandpass_complex(const ScalarField2D& image, const BandpassSpec& spec) {
    ComplexImage f = fft2(image);
    const double edge = spec.edge_bins * std::max(1.0 / image.w, 1.0 / image.h);
    for (int y = 0; y < f.h; ++y) {
        const double ky = signed_bin_freq(y, f.h);
        for (int x = 0; x < f.w; ++x) {
            const double kx = signed_bin_freq(x, f.w);
            const double d = std::hypot(kx - spec.cx, ky - spec.cy);
            f.at(x, y) *= disk_weight(d, spec.radius, edge);
        }
    }
    return ifft2(f);
}

/// Border-clamped bilinear interpolation of a complex image.
cplx sample_complex(const ComplexImage& im, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(im.w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(im.h - 1));
    int x0 = std::min(static_cast<int>(x), im.w - 2);
    int y0 = std::min(static_cast<int>(y), im.h - 2);
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    const double fx = x - x0, fy = y - y0;
    const cplx a = im.at(x0, y0), b = im.at(std::min(x0 + 1, im.w - 1), y0);
    const cplx c = im.at(x0, std::min(y0 + 1, im.h - 1));
    const cplx d = im.at(std::min(x0 + 1, im.w - 1), std::min(y0 + 1, im.h - 1));
    return a * ((1 - fx) * (1 - fy)) + b * (fx * (1 - fy)) + c * ((1 - fx) * fy) + d * (fx * fy);
}

/// Band-passed complex image plus its central-difference spatial gradients
/// (one-sided at the borders), the ingredients of the phase-gradient formula
/// ∇Φ = Im(conj(z)·∇z)/|z|².
struct HarmonicImage {
    ComplexImage z, gx, gy;
};

HarmonicImage harmonic_image(const ScalarField2D& image, const BandpassSpec& spec) {
    HarmonicImage out;
    out.z = bandpass_complex(image, spec);
    const int h = out.z.h, w = out.z.w;
    out.gx = ComplexImage(h, w);
    out.gy = ComplexImage(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yl = std::max(y - 1, 0), yr = std::min(y + 1, h - 1);
            out.gx.at(x, y) = (out.z.at(xr, y) - out.z.at(xl, y)) / static_cast<double>(xr - xl);
            out.gy.at(x, y) = (out.z.at(x, yr) - out.z.at(x, yl)) / static_cast<double>(yr - yl);
        }
    }
    return out;
}

struct NewtonResult {
    double x, y;
    bool ok;
};

/// Damped Newton iteration for the point whose wrapped harmonic phase pair
/// matches the given frame-0 phasors. Steps are clamped in length, and the
/// position is kept inside the image.
NewtonResult newton_track(const HarmonicImage& hh, const HarmonicImage& hv, cplx target_h,
                          cplx target_v, double x, double y, const HarpOpts& o) {
    const int w = hh.z.w, h = hh.z.h;
    for (int it = 0; it < o.max_iters; ++it) {
        const cplx zh = sample_complex(hh.z, x, y);
        const cplx zv = sample_complex(hv.z, x, y);
        const double ph = std::norm(zh), pv = std::norm(zv);
        if (ph < o.min_magnitude * o.min_magnitude || pv < o.min_magnitude * o.min_magnitude)
            return {x, y, false};
        const double rh = std::arg(zh * std::conj(target_h));
        const double rv = std::arg(zv * std::conj(target_v));
        const double a = std::imag(std::conj(zh) * sample_complex(hh.gx, x, y)) / ph;
        const double b = std::imag(std::conj(zh) * sample_complex(hh.gy, x, y)) / ph;
        const double c = std::imag(std::conj(zv) * sample_complex(hv.gx, x, y)) / pv;
        const double d = std::imag(std::conj(zv) * sample_complex(hv.gy, x, y)) / pv;
        const double det = a * d - b * c;
        if (std::abs(det) < 1e-12) return {x, y, false};
        double sx = (-d * rh + b * rv) / det;
        double sy = (c * rh - a * rv) / det;
        double slen = std::hypot(sx, sy);
        if (slen > o.step_clamp_px) {
            sx *= o.step_clamp_px / slen;
            sy *= o.step_clamp_px / slen;
            slen = o.step_clamp_px;
        }
        x = std::clamp(x + sx, 0.0, static_cast<double>(w - 1));
        y = std::clamp(y + sy, 0.0, static_cast<double>(h - 1));
        if (slen < o.tol_px) return {x, y, true};
    }
    return {x, y, false};
}

/// Replaces invalid displacement entries with the component-wise median of
/// valid entries in the smallest window (radius ≤ 16) that holds at least
/// three; entries with no valid neighborhood keep their seed value.
void median_fill(VectorField2D& d, const Mask2D& valid) {
    const VectorField2D src = d;
    std::vector<double> vx, vy;
    auto median = [](std::vector<double>& v) {
        const size_t m = v.size() / 2;
        std::nth_element(v.begin(), v.begin() + m, v.end());
        return v[m];
    };
    for (int y = 0; y < d.h; ++y) {
        for (int x = 0; x < d.w; ++x) {
            if (valid.at(x, y)) continue;
            for (int r = 2; r <= 16; r += 2) {
                vx.clear();
                vy.clear();
                for (int j = std::max(y - r, 0); j <= std::min(y + r, d.h - 1); ++j) {
                    for (int i = std::max(x - r, 0); i <= std::min(x + r, d.w - 1); ++i) {
                        if (!valid.at(i, j)) continue;
                        vx.push_back(src.dx[src.idx(i, j)]);
                        vy.push_back(src.dy[src.idx(i, j)]);
                    }
                }
                if (vx.size() >= 3) {
                    d.dx[d.idx(x, y)] = median(vx);
                    d.dy[d.idx(x, y)] = median(vy);
                    break;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// SinMod internals

void check_sinmod_opts(const SinModOpts& o, const char* who) {
    if (o.kernel_size < 1 || o.kernel_size % 2 == 0)
        throw InvalidInput(std::string(who) + ": kernel size must be odd and positive");
    if (!(o.skew > 0.0) || o.skew > 1.0)
        throw InvalidInput(std::string(who) + ": skew must be in (0, 1]");
    if (!(o.radius_frac > 0.0))
        throw InvalidInput(std::string(who) + ": band radius fraction must be > 0");
    if (o.quality_exponent < 0.0)
        throw InvalidInput(std::string(who) + ": quality exponent must be non-negative");
}

/// Base band response plus the two skewed responses. The skewed windows are
/// the base window tilted linearly along the modulation axis: the ratio of
/// their responses to a pure tone at frequency c+δ is
/// (1+s·δ/r)/(1−s·δ/r), which inverts to δ = (r/s)·(ρ−1)/(ρ+1).
struct SkewResponses {
    ComplexImage base, lo, hi;
};

SkewResponses skew_responses(const ScalarField2D& image, Orientation orientation,
                             double tag_freq_cyc_px, const SinModOpts& opts) {
    const bool along_x = orientation == Orientation::Vertical;
    const double radius = opts.radius_frac * tag_freq_cyc_px;
    const double edge = opts.edge_bins * std::max(1.0 / image.w, 1.0 / image.h);
    const double cx = along_x ? tag_freq_cyc_px : 0.0;
    const double cy = along_x ? 0.0 : tag_freq_cyc_px;

    ComplexImage f = fft2(image);
    ComplexImage fb(f.h, f.w), fl(f.h, f.w), fh(f.h, f.w);
    for (int y = 0; y < f.h; ++y) {
        const double ky = signed_bin_freq(y, f.h);
        for (int x = 0; x < f.w; ++x) {
            const double kx = signed_bin_freq(x, f.w);
            const double d = std::hypot(kx - cx, ky - cy);
            const double base = disk_weight(d, radius, edge);
            if (base == 0.0) continue;
            const double along = along_x ? kx : ky;
            const double tilt = opts.skew * (along - tag_freq_cyc_px) / radius;
            const cplx v = f.at(x, y);
            fb.at(x, y) = v * base;
            fl.at(x, y) = v * (base * std::max(0.0, 1.0 - tilt));
            fh.at(x, y) = v * (base * std::max(0.0, 1.0 + tilt));
        }
    }
    return {ifft2(fb), ifft2(fl), ifft2(fh)};
}

/// Local frequency and quality from a precomputed response bank.
void local_frequency_from(const SkewResponses& r, double tag_freq_cyc_px, const SinModOpts& opts,
                          ScalarField2D& freq, ScalarField2D& quality) {
    const double radius = opts.radius_frac * tag_freq_cyc_px;
    const int h = r.base.h, w = r.base.w;
    freq = ScalarField2D(h, w);
    quality = ScalarField2D(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double pl = std::norm(r.lo.at(x, y));
            const double ph = std::norm(r.hi.at(x, y));
            const double denom = pl + ph;
            if (denom < 1e-300) {
                freq.at(x, y) = 0.0;
                quality.at(x, y) = 0.0;
                continue;
            }
            // amplitude ratio of the two skewed responses
            const double rho = std::sqrt(ph) / std::max(std::sqrt(pl), 1e-300);
            const double delta = (radius / opts.skew) * (rho - 1.0) / (rho + 1.0);
            const double f_loc = tag_freq_cyc_px + delta;
            freq.at(x, y) = f_loc;
            quality.at(x, y) = f_loc < opts.freq_floor ? 0.0 : std::abs(r.base.at(x, y));
        }
    }
}

/// Quality-weighted squared-cosine smoothing (normalized convolution).
/// Pixels whose whole neighborhood has zero weight are flagged.
void smooth_weighted(ScalarField2D& u, const ScalarField2D& weight, Mask2D& ok, int ksize) {
    const int half = ksize / 2;
    std::vector<double> k1(static_cast<size_t>(ksize));
    for (int i = 0; i < ksize; ++i) {
        const double c = std::cos(M_PI * (i - half) / (ksize + 1));
        k1[static_cast<size_t>(i)] = c * c;
    }
    const ScalarField2D src = u;
    for (int y = 0; y < u.h; ++y) {
        for (int x = 0; x < u.w; ++x) {
            double num = 0.0, den = 0.0;
            for (int j = std::max(y - half, 0); j <= std::min(y + half, u.h - 1); ++j) {
                for (int i = std::max(x - half, 0); i <= std::min(x + half, u.w - 1); ++i) {
                    const double wgt = k1[static_cast<size_t>(i - x + half)] *
                                       k1[static_cast<size_t>(j - y + half)] * weight.at(i, j);
                    num += wgt * src.at(i, j);
                    den += wgt;
                }
            }
            if (den < 1e-300) {
                ok.at(x, y) = 0;
            } else {
                u.at(x, y) = num / den;
            }
        }
    }
}

/// One orientation's Eulerian displacement increment between two frames:
/// phase difference of the base band responses divided by the local
/// frequency (mean of the two frames' estimates), then quality-smoothed.
void sinmod_increment(const ScalarField2D& prev, const ScalarField2D& cur,
                      Orientation orientation, double tag_freq_cyc_px, const SinModOpts& opts,
                      ScalarField2D& u, Mask2D& ok) {
    const SkewResponses r0 = skew_responses(prev, orientation, tag_freq_cyc_px, opts);
    const SkewResponses r1 = skew_responses(cur, orientation, tag_freq_cyc_px, opts);
    ScalarField2D f0, q0, f1, q1;
    local_frequency_from(r0, tag_freq_cyc_px, opts, f0, q0);
    local_frequency_from(r1, tag_freq_cyc_px, opts, f1, q1);

    const int h = prev.h, w = prev.w;
    u = ScalarField2D(h, w, prev.sx_mm, prev.sy_mm);
    ok = Mask2D(h, w, 1);
    ScalarField2D weight(h, w);
    double peak = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double f_loc = 0.5 * (f0.at(x, y) + f1.at(x, y));
            const double q = std::sqrt(q0.at(x, y) * q1.at(x, y));
            if (f_loc < opts.freq_floor || q == 0.0) {
                ok.at(x, y) = 0;
                continue;
            }
            const double dphi =
                std::arg(r1.base.at(x, y) * std::conj(r0.base.at(x, y)));
            u.at(x, y) = -dphi / (2.0 * M_PI * f_loc);
            weight.at(x, y) = q;
            peak = std::max(peak, q);
        }
    }
    if (peak > 0.0) {
        for (auto& v : weight.data) v = std::pow(v / peak, opts.quality_exponent);
    }
    smooth_weighted(u, weight, ok, opts.kernel_size);
}

} // namespace

// ---------------------------------------------------------------------------

BandpassSpec BandpassSpec::first_harmonic(double tag_period_mm, Orientation orientation,
                                          double spacing_mm) {
    if (!(tag_period_mm > 0.0))
        throw InvalidInput("BandpassSpec: tag period must be > 0");
    if (!(spacing_mm > 0.0)) throw InvalidInput("BandpassSpec: pixel spacing must be > 0");
    const double f = spacing_mm / tag_period_mm;
    BandpassSpec spec;
    spec.cx = orientation == Orientation::Vertical ? f : 0.0;
    spec.cy = orientation == Orientation::Vertical ? 0.0 : f;
    spec.radius = 0.5 * f;
    spec.edge_bins = 2.0;
    return spec;
}

PhaseImage harp_phase(const ScalarField2D& image, const BandpassSpec& spec) {
    check_image(image, "harp_phase");
    check_spec(spec, "harp_phase");
    const ComplexImage z = bandpass_complex(image, spec);
    PhaseImage out;
    out.phase = ScalarField2D(image.h, image.w, image.sx_mm, image.sy_mm);
    out.magnitude = ScalarField2D(image.h, image.w, image.sx_mm, image.sy_mm);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            double p = std::arg(z.at(x, y));
            if (p <= -M_PI) p = M_PI; // principal interval is (−π, π]
            out.phase.at(x, y) = p;
            out.magnitude.at(x, y) = std::abs(z.at(x, y));
        }
    }
    return out;
}

BaselineTrack harp_track(const TaggedSequence& seq, const BandpassSpec& spec_h,
                         const BandpassSpec& spec_v, const HarpOpts& opts) {
    seq.validate();
    check_spec(spec_h, "harp_track");
    check_spec(spec_v, "harp_track");
    if (opts.max_iters < 1) throw InvalidInput("harp_track: iteration cap must be >= 1");
    if (!(opts.step_clamp_px > 0.0)) throw InvalidInput("harp_track: step clamp must be > 0");

    const int T = static_cast<int>(seq.n_frames());
    const int h = seq.height(), w = seq.width();

    std::vector<HarmonicImage> hh(static_cast<size_t>(T)), hv(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        hh[static_cast<size_t>(t)] = harmonic_image(seq.frames_h[static_cast<size_t>(t)], spec_h);
        hv[static_cast<size_t>(t)] = harmonic_image(seq.frames_v[static_cast<size_t>(t)], spec_v);
    }

    // Frame-0 targets as unit phasors; tracking matches against these.
    ComplexImage target_h(h, w), target_v(h, w);
    Mask2D has_signal(h, w, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const cplx zh = hh[0].z.at(x, y), zv = hv[0].z.at(x, y);
            if (std::abs(zh) < opts.min_magnitude || std::abs(zv) < opts.min_magnitude) {
                has_signal.at(x, y) = 0;
                target_h.at(x, y) = 1.0;
                target_v.at(x, y) = 1.0;
            } else {
                target_h.at(x, y) = zh / std::abs(zh);
                target_v.at(x, y) = zv / std::abs(zv);
            }
        }
    }

    BaselineTrack out;
    out.motion.reserve(static_cast<size_t>(T));
    out.valid.reserve(static_cast<size_t>(T));
    out.motion.emplace_back(h, w, seq.sx_mm, seq.sy_mm);
    out.valid.emplace_back(h, w, 1);

    VectorField2D prev(h, w, seq.sx_mm, seq.sy_mm);
    for (int t = 1; t < T; ++t) {
        VectorField2D d(h, w, seq.sx_mm, seq.sy_mm);
        Mask2D valid(h, w, 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = d.idx(x, y);
                double sx = opts.seed_from_previous ? prev.dx[i] : 0.0;
                double sy = opts.seed_from_previous ? prev.dy[i] : 0.0;
                d.dx[i] = sx;
                d.dy[i] = sy;
                if (!has_signal.at(x, y)) continue;
                const NewtonResult r =
                    newton_track(hh[static_cast<size_t>(t)], hv[static_cast<size_t>(t)],
                                 target_h.at(x, y), target_v.at(x, y), x + sx, y + sy, opts);
                d.dx[i] = r.x - x;
                d.dy[i] = r.y - y;
                valid.at(x, y) = r.ok ? 1 : 0;
            }
        }
        median_fill(d, valid);
        prev = d;
        out.motion.push_back(std::move(d));
        out.valid.push_back(std::move(valid));
    }
    return out;
}

std::pair<ScalarField2D, ScalarField2D> sinmod_local_frequency(const ScalarField2D& image,
                                                               Orientation orientation,
                                                               double tag_freq_cyc_px,
                                                               const SinModOpts& opts) {
    check_image(image, "sinmod_local_frequency");
    check_sinmod_opts(opts, "sinmod_local_frequency");
    if (!(tag_freq_cyc_px > 0.0))
        throw InvalidInput("sinmod_local_frequency: tag frequency must be > 0");
    const SkewResponses r = skew_responses(image, orientation, tag_freq_cyc_px, opts);
    ScalarField2D freq, quality;
    local_frequency_from(r, tag_freq_cyc_px, opts, freq, quality);
    freq.sx_mm = quality.sx_mm = image.sx_mm;
    freq.sy_mm = quality.sy_mm = image.sy_mm;
    return {std::move(freq), std::move(quality)};
}

BaselineTrack sinmod_track(const TaggedSequence& seq, const SinModOpts& opts) {
    seq.validate();
    check_sinmod_opts(opts, "sinmod_track");
    if (!(seq.tag_period_mm > 0.0))
        throw InvalidInput("sinmod_track: sequence lacks a positive tag period");

    const int T = static_cast<int>(seq.n_frames());
    const int h = seq.height(), w = seq.width();
    const double fx = seq.sx_mm / seq.tag_period_mm; // vertical tags modulate along x
    const double fy = seq.sy_mm / seq.tag_period_mm;

    BaselineTrack out;
    out.motion.reserve(static_cast<size_t>(T));
    out.valid.reserve(static_cast<size_t>(T));
    out.motion.emplace_back(h, w, seq.sx_mm, seq.sy_mm);
    out.valid.emplace_back(h, w, 1);

    for (int t = 1; t < T; ++t) {
        ScalarField2D ux, uy;
        Mask2D okx, oky;
        sinmod_increment(seq.frames_v[static_cast<size_t>(t - 1)],
                         seq.frames_v[static_cast<size_t>(t)], Orientation::Vertical, fx, opts,
                         ux, okx);
        sinmod_increment(seq.frames_h[static_cast<size_t>(t - 1)],
                         seq.frames_h[static_cast<size_t>(t)], Orientation::Horizontal, fy, opts,
                         uy, oky);

        VectorField2D step(h, w, seq.sx_mm, seq.sy_mm);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = step.idx(x, y);
                step.dx[i] = ux.at(x, y);
                step.dy[i] = uy.at(x, y);
            }
        }

        // Lagrangian accumulation: evaluate the adjacent-frame increment at
        // each material point's previous position.
        const VectorField2D& prev_total = out.motion[static_cast<size_t>(t - 1)];
        VectorField2D total = compose(step, prev_total);
        Mask2D valid(h, w, 0);
        const Mask2D& prev_valid = out.valid[static_cast<size_t>(t - 1)];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t i = total.idx(x, y);
                const int px = std::clamp(
                    static_cast<int>(std::lround(x + prev_total.dx[i])), 0, w - 1);
                const int py = std::clamp(
                    static_cast<int>(std::lround(y + prev_total.dy[i])), 0, h - 1);
                valid.at(x, y) =
                    (prev_valid.at(x, y) && okx.at(px, py) && oky.at(px, py)) ? 1 : 0;
            }
        }
        out.motion.push_back(std::move(total));
        out.valid.push_back(std::move(valid));
    }
    return out;
}

} // namespace brite
