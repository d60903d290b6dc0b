#include "brite/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "brite/errors.hpp"
#include "brite/rng.hpp"
#include "brite/tagseq_io.hpp"

namespace brite {

namespace {

using ad::Graph;
using ad::Tensor;

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double inverse_softplus(double y) { return std::log(std::expm1(y)); }

// Pixel index -> [-1,1] along one axis; a single-pixel axis maps to 0.
double norm_coord(int i, int extent) {
    return extent > 1 ? 2.0 * i / (extent - 1) - 1.0 : 0.0;
}

struct GridConstants {
    int h{0}, w{0}, n{0};
    std::vector<double> coords_norm; // [n,2] in [-1,1]^2
    std::vector<double> coords_px;   // [n,2] in pixels
};

GridConstants make_grid(int h, int w) {
    GridConstants gc;
    gc.h = h;
    gc.w = w;
    gc.n = h * w;
    gc.coords_norm.resize(static_cast<size_t>(gc.n) * 2);
    gc.coords_px.resize(static_cast<size_t>(gc.n) * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t i = (static_cast<size_t>(y) * w + x) * 2;
            gc.coords_norm[i] = norm_coord(x, w);
            gc.coords_norm[i + 1] = norm_coord(y, h);
            gc.coords_px[i] = x;
            gc.coords_px[i + 1] = y;
        }
    }
    return gc;
}

// In-graph inverse deformation: d = exp(-u) by scaling and squaring, with the
// velocity kept differentiable. Matches the out-of-graph integrator (same
// step count, same clamp-border bilinear interpolation).
Tensor inverse_displacement_graph(Graph& g, Tensor u, Tensor coords_px, int h, int w,
                                  int n_squaring) {
    Tensor d = g.scale(u, -1.0 / static_cast<double>(1ULL << n_squaring));
    for (int k = 0; k < n_squaring; ++k) {
        Tensor dx_img = g.reshape(g.slice_cols(d, 0, 1), h, w);
        Tensor dy_img = g.reshape(g.slice_cols(d, 1, 2), h, w);
        Tensor pos = g.add(coords_px, d);
        Tensor sx = g.grid_sample(dx_img, pos);
        Tensor sy = g.grid_sample(dy_img, pos);
        d = g.add(d, g.concat_cols(sx, sy));
    }
    return d;
}

// Analytic faded pattern at already-mapped pixel coordinates [n,2]:
// A_t * sin(2*pi*mu * coord_mm + phase) + B_t, where the modulated axis is x
// for vertical tag lines and y for horizontal ones.
Tensor pattern_at_graph(Graph& g, Tensor coords, Orientation orientation, const TagParams& params,
                        double sx_mm, double sy_mm, Tensor amp, Tensor off) {
    const bool along_x = orientation == Orientation::Vertical;
    Tensor axis = g.slice_cols(coords, along_x ? 0 : 1, along_x ? 1 : 2);
    const double to_mm = along_x ? sx_mm : sy_mm;
    const double phase = along_x ? params.phi_v : params.phi_h;
    Tensor arg = g.add_const(g.scale(axis, 2.0 * M_PI * params.mu * to_mm), phase);
    return g.add(g.mul(g.sin(arg), amp), off);
}

struct FrameGraphOut {
    Tensor loss;
    Tensor d_inv;    // [n,2] inverse displacement
    Tensor recon_h;  // [n,1]
    Tensor recon_v;
    Tensor anatomy;  // [n,1]
    Tensor pattern_h;
    Tensor pattern_v;
};

// One reconstruction pass: velocity -> inverse deformation -> model images ->
// summed squared error against the observations.
FrameGraphOut build_frame_graph(Graph& g, VelocityNet& net, FadingState& fading,
                                const GridConstants& gc, const TrackRefs& refs,
                                const ScalarField2D& g_h, const ScalarField2D& g_v,
                                const TrackOpts& opts) {
    Tensor x_norm = g.constant(gc.n, 2, gc.coords_norm);
    Tensor x_px = g.constant(gc.n, 2, gc.coords_px);
    Tensor u = net.forward(g, x_norm);
    Tensor d_inv = inverse_displacement_graph(g, u, x_px, gc.h, gc.w, opts.n_squaring);
    Tensor m = g.add(x_px, d_inv); // coordinates this frame pulls from

    // Pre-imaging composition: the anatomy image was already resampled, so it
    // is sampled at m directly; the analytic pattern needs the fully composed
    // coordinates m' = m + d0_inv(m).
    Tensor m_pattern = m;
    if (refs.pre_inverse != nullptr) {
        Tensor p0x = g.constant(gc.h, gc.w, refs.pre_inverse->dx);
        Tensor p0y = g.constant(gc.h, gc.w, refs.pre_inverse->dy);
        Tensor ox = g.grid_sample(p0x, m);
        Tensor oy = g.grid_sample(p0y, m);
        m_pattern = g.add(m, g.concat_cols(ox, oy));
    }

    Tensor anat_img = g.constant(gc.h, gc.w, refs.anatomy.data);
    Tensor anat = g.grid_sample(anat_img, m);

    Tensor amp = g.softplus(bind(g, fading.raw_a));
    Tensor off = bind(g, fading.raw_b);
    const double sx = refs.anatomy.sx_mm, sy = refs.anatomy.sy_mm;
    Tensor p_h = pattern_at_graph(g, m_pattern, Orientation::Horizontal, refs.params, sx, sy, amp,
                                  off);
    Tensor p_v = pattern_at_graph(g, m_pattern, Orientation::Vertical, refs.params, sx, sy, amp,
                                  off);

    FrameGraphOut out;
    out.d_inv = d_inv;
    out.anatomy = anat;
    out.pattern_h = p_h;
    out.pattern_v = p_v;
    out.recon_h = g.mul(anat, p_h);
    out.recon_v = g.mul(anat, p_v);

    Tensor res_h = g.sub(out.recon_h, g.constant(gc.n, 1, g_h.data));
    Tensor res_v = g.sub(out.recon_v, g.constant(gc.n, 1, g_v.data));
    if (opts.loss_mask != nullptr) {
        std::vector<double> mv(opts.loss_mask->on.begin(), opts.loss_mask->on.end());
        Tensor mask = g.constant(gc.n, 1, mv);
        res_h = g.mul(res_h, mask);
        res_v = g.mul(res_v, mask);
    }
    out.loss = g.add(g.sum(g.square(res_h)), g.sum(g.square(res_v)));
    return out;
}

ScalarField2D field_from_column(const std::vector<double>& col, int h, int w, double sx,
                                double sy) {
    ScalarField2D f(h, w, sx, sy);
    f.data = col;
    return f;
}

void validate_refs(const TrackRefs& refs, const char* where) {
    if (refs.anatomy.h <= 0 || refs.anatomy.w <= 0 || refs.anatomy.data.empty()) {
        throw InvalidInput(std::string(where) + ": reference anatomy is empty");
    }
    if (!(refs.params.mu > 0.0)) {
        throw InvalidInput(std::string(where) +
                           ": reference tag frequency is not positive (no usable "
                           "disentanglement)");
    }
    if (refs.pre_inverse != nullptr && !refs.pre_inverse->same_shape(refs.anatomy)) {
        throw ShapeError(std::string(where) + ": pre-imaging field grid mismatch");
    }
}

std::vector<double> snapshot_params(const std::vector<ad::Param*>& ps) {
    std::vector<double> out;
    for (const auto* p : ps) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

void restore_params(const std::vector<ad::Param*>& ps, const std::vector<double>& snap) {
    size_t off = 0;
    for (auto* p : ps) {
        std::copy(snap.begin() + off, snap.begin() + off + p->size(), p->value.begin());
        off += p->size();
    }
}

} // namespace

// ---------------------------------------------------------------------------
// VelocityNet / FadingState

VelocityNet::VelocityNet()
    : w1(2, kHidden),
      b1(1, kHidden),
      w2(kHidden, kHidden),
      b2(1, kHidden),
      w3(kHidden, kHidden),
      b3(1, kHidden),
      wo(kHidden, 2),
      bo(1, 2) {}

void VelocityNet::init(uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x7e10c17fULL));
    auto xavier = [&rng](ad::Param& p, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : p.value) v = rng.uniform(-bound, bound);
    };
    xavier(w1, 2, kHidden);
    xavier(w2, kHidden, kHidden);
    xavier(w3, kHidden, kHidden);
    std::fill(b1.value.begin(), b1.value.end(), 0.0);
    std::fill(b2.value.begin(), b2.value.end(), 0.0);
    std::fill(b3.value.begin(), b3.value.end(), 0.0);
    // Identity start: with a zero output layer the velocity is exactly zero
    // everywhere, so warm starts always begin at the previous deformation.
    std::fill(wo.value.begin(), wo.value.end(), 0.0);
    std::fill(bo.value.begin(), bo.value.end(), 0.0);
}

ad::Tensor VelocityNet::forward(ad::Graph& g, ad::Tensor coords_norm) {
    Tensor h1 = g.linear(coords_norm, bind(g, w1), bind(g, b1), true);
    Tensor h2 = g.linear(h1, bind(g, w2), bind(g, b2), true);
    Tensor h3 = g.linear(h2, bind(g, w3), bind(g, b3), true);
    return g.linear(h3, bind(g, wo), bind(g, bo), false);
}

std::vector<ad::Param*> VelocityNet::params() {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &wo, &bo};
}

FadingState::FadingState() {
    raw_a.value[0] = inverse_softplus(0.5);
    raw_b.value[0] = 0.5;
}

double FadingState::amplitude() const { return softplus_value(raw_a.value[0]); }
double FadingState::offset() const { return raw_b.value[0]; }

// ---------------------------------------------------------------------------
// Operations

VectorField2D velocity_field(VelocityNet& net, int h, int w) {
    if (h <= 0 || w <= 0) throw InvalidInput("velocity_field: grid must be positive");
    const GridConstants gc = make_grid(h, w);
    Graph g;
    Tensor u = net.forward(g, g.constant(gc.n, 2, gc.coords_norm));
    const auto& uv = g.values(u);
    VectorField2D out(h, w);
    for (int i = 0; i < gc.n; ++i) {
        out.dx[i] = uv[2 * static_cast<size_t>(i)];
        out.dy[i] = uv[2 * static_cast<size_t>(i) + 1];
    }
    return out;
}

std::pair<ScalarField2D, ScalarField2D> reconstruct_frame(const ScalarField2D& a0,
                                                          const TagParams& params,
                                                          const FadingState& fading,
                                                          const VectorField2D& phi_inv,
                                                          const VectorField2D* pre_inverse) {
    TrackRefs refs{a0, params, pre_inverse};
    validate_refs(refs, "reconstruct_frame");
    if (!phi_inv.same_shape(a0)) throw ShapeError("reconstruct_frame: field grid mismatch");

    const double A_t = fading.amplitude();
    const double B_t = fading.offset();

    // Component planes of the pre-imaging inverse, wrapped for sampling.
    ScalarField2D d0x, d0y;
    if (pre_inverse != nullptr) {
        d0x = ScalarField2D(pre_inverse->h, pre_inverse->w);
        d0y = ScalarField2D(pre_inverse->h, pre_inverse->w);
        d0x.data = pre_inverse->dx;
        d0y.data = pre_inverse->dy;
    }

    ScalarField2D gh(a0.h, a0.w, a0.sx_mm, a0.sy_mm);
    ScalarField2D gv(a0.h, a0.w, a0.sx_mm, a0.sy_mm);
    for (int y = 0; y < a0.h; ++y) {
        for (int x = 0; x < a0.w; ++x) {
            const size_t i = phi_inv.idx(x, y);
            const double mx = x + phi_inv.dx[i];
            const double my = y + phi_inv.dy[i];
            const double anat = bilinear_sample(a0, mx, my);
            double pat_x = mx, pat_y = my;
            if (pre_inverse != nullptr) {
                pat_x = mx + bilinear_sample(d0x, mx, my);
                pat_y = my + bilinear_sample(d0y, mx, my);
            }
            const double ph =
                A_t * std::sin(2.0 * M_PI * params.mu * (pat_y * a0.sy_mm) + params.phi_h) + B_t;
            const double pv =
                A_t * std::sin(2.0 * M_PI * params.mu * (pat_x * a0.sx_mm) + params.phi_v) + B_t;
            gh.at(x, y) = anat * ph;
            gv.at(x, y) = anat * pv;
        }
    }
    return {std::move(gh), std::move(gv)};
}

FrameResult track_frame(VelocityNet& net, FadingState& fading, const ScalarField2D& g_h,
                        const ScalarField2D& g_v, const TrackRefs& refs, const TrackOpts& opts) {
    validate_refs(refs, "track_frame");
    if (!g_h.same_shape(refs.anatomy) || !g_v.same_shape(refs.anatomy)) {
        throw ShapeError("track_frame: observation grid mismatch");
    }
    if (opts.iterations < 1) throw InvalidInput("track_frame: iterations must be >= 1");
    if (opts.n_squaring < 1) throw InvalidInput("track_frame: n_squaring must be >= 1");
    if (opts.loss_mask != nullptr &&
        (opts.loss_mask->h != refs.anatomy.h || opts.loss_mask->w != refs.anatomy.w)) {
        throw ShapeError("track_frame: loss mask grid mismatch");
    }

    const GridConstants gc = make_grid(refs.anatomy.h, refs.anatomy.w);

    ad::Adam opt;
    opt.add_group(net.params(), opts.lr_net);
    opt.add_group({&fading.raw_a, &fading.raw_b}, opts.lr_fading);

    std::vector<ad::Param*> all = net.params();
    all.push_back(&fading.raw_a);
    all.push_back(&fading.raw_b);

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_snap = snapshot_params(all);
    std::vector<double> best_hist;
    best_hist.reserve(opts.iterations);
    int iters_run = 0;

    for (int it = 0; it < opts.iterations; ++it) {
        Graph g;
        FrameGraphOut fg = build_frame_graph(g, net, fading, gc, refs, g_h, g_v, opts);
        const double val = g.value_scalar(fg.loss);
        if (!std::isfinite(val)) throw NumericError("track_frame: non-finite loss");
        if (val < best) {
            best = val;
            best_snap = snapshot_params(all);
        }
        best_hist.push_back(best);
        iters_run = it + 1;
        if (opts.early_stop && it >= opts.plateau_window) {
            const double prev = best_hist[it - opts.plateau_window];
            if ((prev - best) / std::max(prev, 1e-300) < opts.plateau_rel) break;
        }
        if (it + 1 < opts.iterations) {
            g.backward(fg.loss);
            opt.step(g);
        }
    }

    restore_params(all, best_snap);

    // Re-evaluate the model at the best iterate to populate the result.
    Graph g;
    FrameGraphOut fg = build_frame_graph(g, net, fading, gc, refs, g_h, g_v, opts);
    const int h = refs.anatomy.h, w = refs.anatomy.w;
    const double sx = refs.anatomy.sx_mm, sy = refs.anatomy.sy_mm;

    FrameResult out;
    out.loss = best;
    out.iterations_run = iters_run;
    out.best_loss_trajectory = std::move(best_hist);
    out.fading_amplitude = fading.amplitude();
    out.fading_offset = fading.offset();
    out.recon_h = field_from_column(g.values(fg.recon_h), h, w, sx, sy);
    out.recon_v = field_from_column(g.values(fg.recon_v), h, w, sx, sy);
    out.anatomy_warped = field_from_column(g.values(fg.anatomy), h, w, sx, sy);
    out.pattern_h = field_from_column(g.values(fg.pattern_h), h, w, sx, sy);
    out.pattern_v = field_from_column(g.values(fg.pattern_v), h, w, sx, sy);

    VectorField2D u_field = velocity_field(net, h, w);
    u_field.sx_mm = sx;
    u_field.sy_mm = sy;
    out.phi = exp_map(u_field, opts.n_squaring);
    return out;
}

LagrangianResult track_sequence(const TaggedSequence& seq, const DisentangleResult& dis,
                                const TrackOpts& opts) {
    seq.validate();
    if (seq.n_frames() == 0) throw InvalidInput("track_sequence: empty sequence");
    if (dis.anatomy.h != seq.height() || dis.anatomy.w != seq.width()) {
        throw ShapeError("track_sequence: sequence and reference grids differ");
    }
    if (!(dis.params.mu > 0.0)) {
        throw InvalidInput("track_sequence: reference tag frequency is not positive");
    }

    const int h = seq.height(), w = seq.width();
    const int T = static_cast<int>(seq.n_frames());

    LagrangianResult result;
    result.params = dis.params;
    result.sx_mm = seq.sx_mm;
    result.sy_mm = seq.sy_mm;
    result.times_s = seq.times_s;
    result.frames.resize(T);

    ScalarField2D anatomy = dis.anatomy;
    anatomy.sx_mm = seq.sx_mm;
    anatomy.sy_mm = seq.sy_mm;

    // Pass 1: fit frame 0 against the pure-sinusoid reference to absorb any
    // deformation that happened between tagging and the first image.
    VelocityNet net0;
    net0.init(opts.seed);
    FadingState fade0;
    TrackRefs refs0{anatomy, dis.params, nullptr};
    FrameResult r0 = track_frame(net0, fade0, seq.frames_h[0], seq.frames_v[0], refs0, opts);
    result.pre_imaging = r0.phi;

    // Substitution: resample the anatomy once; the pattern keeps the inverse
    // field for analytic composition.
    ScalarField2D anat_sub = warp(anatomy, result.pre_imaging.inverse);
    result.reference_anatomy = anat_sub;

    // Frame 0 of the Lagrangian chain is the reference itself.
    FrameResult f0;
    f0.phi.forward = VectorField2D(h, w, seq.sx_mm, seq.sy_mm);
    f0.phi.inverse = VectorField2D(h, w, seq.sx_mm, seq.sy_mm);
    f0.phi.n_squaring_steps = 0;
    f0.fading_amplitude = r0.fading_amplitude;
    f0.fading_offset = r0.fading_offset;
    f0.loss = r0.loss;
    f0.iterations_run = r0.iterations_run;
    f0.best_loss_trajectory = r0.best_loss_trajectory;
    f0.recon_h = r0.recon_h;
    f0.recon_v = r0.recon_v;
    f0.anatomy_warped = r0.anatomy_warped;
    f0.pattern_h = r0.pattern_h;
    f0.pattern_v = r0.pattern_v;
    result.frames[0] = std::move(f0);

    if (T == 1) return result;

    // Pass 2: frames 1..T-1, warm-started. The chain starts from a fresh net:
    // net0's field is the pre-imaging deformation, which the substitution has
    // already removed from the problem, so reusing it would apply it twice.
    VelocityNet net;
    net.init(opts.seed);
    TrackRefs refs{anat_sub, dis.params, &result.pre_imaging.inverse};
    FadingState fading;
    for (int t = 1; t < T; ++t) {
        if (!opts.warm_start_fading) fading = FadingState();
        result.frames[t] =
            track_frame(net, fading, seq.frames_h[t], seq.frames_v[t], refs, opts);
    }
    return result;
}

TrackOpts TrackOpts::desk() {
    TrackOpts o;
    o.iterations = 1200;
    // At the desk scale the loss bottoms out at the noise floor; a looser
    // relative-plateau threshold lets the stop rule fire there instead of
    // chasing sub-noise improvements to the iteration cap.
    o.plateau_rel = 1e-4;
    return o;
}

void save_lagrangian_result(const LagrangianResult& result, const std::string& prefix) {
    const int T = static_cast<int>(result.frames.size());
    if (T == 0) throw InvalidInput("save_lagrangian_result: no frames");
    std::vector<VectorField2D> fwd, inv;
    fwd.reserve(T);
    inv.reserve(T);
    for (const auto& f : result.frames) {
        fwd.push_back(f.phi.forward);
        inv.push_back(f.phi.inverse);
    }
    save_displacement_series(prefix + ".motion_fwd.tagseq", fwd);
    save_displacement_series(prefix + ".motion_inv.tagseq", inv);

    nlohmann::json j;
    j["spacing_mm"] = {result.sx_mm, result.sy_mm};
    j["times_s"] = result.times_s;
    j["tag_params"] = {{"A", result.params.A},
                       {"B", result.params.B},
                       {"mu", result.params.mu},
                       {"phi_h", result.params.phi_h},
                       {"phi_v", result.params.phi_v}};
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : result.frames) {
        frames.push_back({{"A_t", f.fading_amplitude},
                          {"B_t", f.fading_offset},
                          {"loss", f.loss},
                          {"iterations", f.iterations_run}});
    }
    j["frames"] = std::move(frames);
    std::ofstream out(prefix + ".track.json", std::ios::binary);
    if (!out) throw FormatError("save_lagrangian_result: cannot open " + prefix + ".track.json");
    out << j.dump(2) << "\n";
}

} // namespace brite
