#include "brite/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "brite/tagseq_io.hpp"
#include "json.hpp"

namespace brite {

namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Physical coordinates (mm) along the modulated axis, flattened row-major.
std::vector<double> axis_mm(int h, int w, double sx_mm, double sy_mm, Orientation o) {
    std::vector<double> v(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            v[static_cast<size_t>(y) * w + x] = o == Orientation::Vertical ? x * sx_mm : y * sy_mm;
        }
    }
    return v;
}

double data_loss_at(const ScalarField2D& g0, const std::vector<double>& anatomy,
                    const std::vector<double>& coord_mm, double A, double B, double mu,
                    double phi) {
    double loss = 0.0;
    for (size_t i = 0; i < g0.data.size(); ++i) {
        const double p = A * std::sin(2.0 * M_PI * mu * coord_mm[i] + phi) + B;
        const double r = anatomy[i] * p - g0.data[i];
        loss += r * r;
    }
    return loss;
}

} // namespace

PixelGridPrior::PixelGridPrior(int h, int w, double lambda_tv)
    : h_(h), w_(w), lambda_tv_(lambda_tv), z_(h * w, 1, 0.0) {
    if (h < 1 || w < 1) throw InvalidInput("PixelGridPrior: empty grid");
    if (lambda_tv < 0.0) throw InvalidInput("PixelGridPrior: negative smoothness weight");
}

void PixelGridPrior::warm_start(const ScalarField2D& g0_h, const ScalarField2D& g0_v,
                                const TagParams& init) {
    for (size_t i = 0; i < z_.value.size(); ++i) {
        const double a0 =
            std::clamp(0.5 * (g0_h.data[i] + g0_v.data[i]) / init.B, 0.02, 0.98);
        z_.value[i] = std::log(a0 / (1.0 - a0));
    }
}

ad::Tensor PixelGridPrior::decode(ad::Graph& g) { return g.sigmoid(ad::bind(g, z_)); }

ad::Tensor PixelGridPrior::regularization(ad::Graph& g, ad::Tensor decoded) {
    if (lambda_tv_ == 0.0) return g.scalar(0.0);
    const ad::Tensor img = g.reshape(decoded, h_, w_);
    const ad::Tensor gx = g.sub(g.slice_cols(img, 1, w_), g.slice_cols(img, 0, w_ - 1));
    const ad::Tensor gy = g.sub(g.slice_rows(img, 1, h_), g.slice_rows(img, 0, h_ - 1));
    const ad::Tensor gxc = g.slice_rows(gx, 0, h_ - 1);
    const ad::Tensor gyc = g.slice_cols(gy, 0, w_ - 1);
    const ad::Tensor tv =
        g.sum(g.sqrt(g.add_const(g.add(g.square(gxc), g.square(gyc)), 1e-8)));
    return g.scale(tv, lambda_tv_);
}

TagParams init_tag_params(double tag_period_hint_mm) {
    if (!(tag_period_hint_mm > 0.0)) {
        throw InvalidInput("init_tag_params: tag period hint must be positive");
    }
    TagParams p;
    p.A = 0.45;
    p.B = 0.55;
    p.mu = 1.0 / tag_period_hint_mm;
    p.phi_h = 2.0 * M_PI;
    p.phi_v = 2.0 * M_PI;
    return p;
}

DisentangleResult disentangle(const ScalarField2D& g0_h, const ScalarField2D& g0_v,
                              AnatomyPrior& prior, const DisentangleOpts& opts) {
    if (!g0_h.same_shape(g0_v)) throw ShapeError("disentangle: input images differ in shape");
    if (g0_h.h != prior.height() || g0_h.w != prior.width()) {
        throw ShapeError("disentangle: prior grid does not match the images");
    }
    if (opts.iterations < 1) throw InvalidInput("disentangle: need at least one iteration");
    double peak = 0.0;
    for (double v : g0_h.data) {
        if (!std::isfinite(v)) throw InvalidInput("disentangle: non-finite input image");
        peak = std::max(peak, std::abs(v));
    }
    for (double v : g0_v.data) {
        if (!std::isfinite(v)) throw InvalidInput("disentangle: non-finite input image");
        peak = std::max(peak, std::abs(v));
    }

    const TagParams init = init_tag_params(opts.tag_period_hint_mm);
    prior.warm_start(g0_h, g0_v, init);
    const int h = g0_h.h, w = g0_h.w;
    const size_t n = g0_h.size();
    const std::vector<double> xmm = axis_mm(h, w, g0_h.sx_mm, g0_h.sy_mm, Orientation::Vertical);
    const std::vector<double> ymm = axis_mm(h, w, g0_h.sx_mm, g0_h.sy_mm, Orientation::Horizontal);

    // Phase multi-start: pick each orientation's initial phase by the lowest
    // starting loss with the anatomy at its decoded initialization.
    double phi_h0 = init.phi_h, phi_v0 = init.phi_v;
    if (opts.phase_multi_start) {
        std::vector<double> anat0;
        {
            ad::Graph g;
            anat0 = g.values(prior.decode(g));
        }
        double best_h = std::numeric_limits<double>::infinity();
        double best_v = best_h;
        for (int k = 0; k < 4; ++k) {
            const double phi = init.phi_h + k * M_PI / 2.0;
            const double lh = data_loss_at(g0_h, anat0, ymm, init.A, init.B, init.mu, phi);
            const double lv = data_loss_at(g0_v, anat0, xmm, init.A, init.B, init.mu, phi);
            if (lh < best_h) {
                best_h = lh;
                phi_h0 = phi;
            }
            if (lv < best_v) {
                best_v = lv;
                phi_v0 = phi;
            }
        }
    }

    // Raw optimization variables; amplitude through a softplus to stay >= 0.
    ad::Param raw_a(1, 1, inverse_softplus(init.A));
    ad::Param raw_b(1, 1, init.B);
    ad::Param raw_mu(1, 1, init.mu);
    ad::Param raw_ph(1, 1, phi_h0);
    ad::Param raw_pv(1, 1, phi_v0);

    ad::Adam adam;
    adam.add_group(prior.latents(), opts.lr_latent);
    adam.add_group({&raw_a, &raw_b, &raw_mu, &raw_ph, &raw_pv}, opts.lr_tags);

    DisentangleResult out;
    out.degenerate_input = peak == 0.0;
    out.loss_trajectory.reserve(opts.iterations);

    std::vector<std::vector<double>> best_latents;
    double best_tags[5] = {0, 0, 0, 0, 0};

    for (int it = 0; it < opts.iterations; ++it) {
        ad::Graph g;
        const ad::Tensor dec = prior.decode(g);
        const ad::Tensor reg = prior.regularization(g, dec);
        const ad::Tensor amp = g.softplus(ad::bind(g, raw_a));
        const ad::Tensor off = ad::bind(g, raw_b);
        const ad::Tensor mu = ad::bind(g, raw_mu);
        const ad::Tensor ph = ad::bind(g, raw_ph);
        const ad::Tensor pv = ad::bind(g, raw_pv);

        auto pattern = [&](const std::vector<double>& coord, ad::Tensor phase) {
            const ad::Tensor c = g.constant(static_cast<int>(n), 1, coord);
            const ad::Tensor arg = g.add(g.scale(g.mul(c, mu), 2.0 * M_PI), phase);
            return g.add(g.mul(g.sin(arg), amp), off);
        };
        auto data_term = [&](const ScalarField2D& g0, ad::Tensor p) {
            const ad::Tensor target = g.constant(static_cast<int>(n), 1, g0.data);
            return g.sum(g.square(g.sub(g.mul(dec, p), target)));
        };

        const ad::Tensor loss = g.add(
            g.add(data_term(g0_h, pattern(ymm, ph)), data_term(g0_v, pattern(xmm, pv))), reg);
        const double val = g.value_scalar(loss);
        out.loss_trajectory.push_back(val);

        if (val < out.final_loss) {
            out.final_loss = val;
            best_latents.clear();
            for (const ad::Param* p : prior.latents()) best_latents.push_back(p->value);
            best_tags[0] = raw_a.value[0];
            best_tags[1] = raw_b.value[0];
            best_tags[2] = raw_mu.value[0];
            best_tags[3] = raw_ph.value[0];
            best_tags[4] = raw_pv.value[0];
        }

        g.backward(loss);
        adam.step(g);
    }

    // Restore the best-loss iterate and decode it once more for the output.
    const std::vector<ad::Param*> latents = prior.latents();
    for (size_t i = 0; i < latents.size(); ++i) latents[i]->value = best_latents[i];
    out.params.A = softplus_value(best_tags[0]);
    out.params.B = best_tags[1];
    out.params.mu = best_tags[2];
    out.params.phi_h = best_tags[3];
    out.params.phi_v = best_tags[4];

    out.anatomy = ScalarField2D(h, w, g0_h.sx_mm, g0_h.sy_mm);
    {
        ad::Graph g;
        out.anatomy.data = g.values(prior.decode(g));
    }
    return out;
}

std::pair<ScalarField2D, ScalarField2D> reconstruct_t0(const DisentangleResult& r) {
    const ScalarField2D& a = r.anatomy;
    if (a.h < 1 || a.w < 1) throw InvalidInput("reconstruct_t0: empty result");
    ScalarField2D gh = tag_pattern(r.params, Orientation::Horizontal, a.h, a.w, a.sx_mm, a.sy_mm);
    ScalarField2D gv = tag_pattern(r.params, Orientation::Vertical, a.h, a.w, a.sx_mm, a.sy_mm);
    for (size_t i = 0; i < a.data.size(); ++i) {
        gh.data[i] *= a.data[i];
        gv.data[i] *= a.data[i];
    }
    return {std::move(gh), std::move(gv)};
}

void save_disentangle_result(const std::string& prefix, const DisentangleResult& r) {
    save_scalar_image(prefix + ".anatomy.tagseq", r.anatomy);
    nlohmann::json j;
    j["params"] = {{"A", r.params.A},
                   {"B", r.params.B},
                   {"mu", r.params.mu},
                   {"phi_h", r.params.phi_h},
                   {"phi_v", r.params.phi_v}};
    j["final_loss"] = r.final_loss;
    j["degenerate_input"] = r.degenerate_input;
    j["loss_trajectory"] = r.loss_trajectory;
    std::ofstream os(prefix + ".result.json", std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + prefix + ".result.json");
    os << j.dump(2) << '\n';
}

} // namespace brite
