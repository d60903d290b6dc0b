#pragma once

// Joint recovery of anatomy and tag parameters from the two t=0 tagged
// images: minimize sum_i ||g0_i - decode(z) * p0_i(TagParams)||^2 plus a
// prior penalty, by Adam over the latent and the five tag parameters.

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "brite/autodiff.hpp"
#include "brite/fields.hpp"
#include "brite/tagging.hpp"

namespace brite {

/// Differentiable anatomy model: latent parameters decoded to an image with
/// values in [0,1]. Implementations own their latents and rebuild their
/// decode subgraph on every optimization iteration.
class AnatomyPrior {
public:
    virtual ~AnatomyPrior() = default;

    virtual int height() const = 0;
    virtual int width() const = 0;

    /// Latent parameters, in a stable order, for the optimizer.
    virtual std::vector<ad::Param*> latents() = 0;

    /// Optional data-driven latent initialization, called once before
    /// optimization. Must be deterministic in its inputs. Default: no-op.
    virtual void warm_start(const ScalarField2D& g0_h, const ScalarField2D& g0_v,
                            const TagParams& init) {
        (void)g0_h;
        (void)g0_v;
        (void)init;
    }

    /// Binds the latents into g and returns the decoded anatomy as an
    /// [H*W, 1] tensor with values in (0,1).
    virtual ad::Tensor decode(ad::Graph& g) = 0;

    /// Scalar regularization penalty for the decoded anatomy.
    virtual ad::Tensor regularization(ad::Graph& g, ad::Tensor decoded) = 0;
};

/// Default prior: one latent per pixel, squashed through a logistic so the
/// decoded anatomy stays in (0,1), with a total-variation smoothness penalty.
class PixelGridPrior final : public AnatomyPrior {
public:
    PixelGridPrior(int h, int w, double lambda_tv = 1e-3);

    int height() const override { return h_; }
    int width() const override { return w_; }
    std::vector<ad::Param*> latents() override { return {&z_}; }
    /// Initializes the latent at the logit of the mean observed intensity
    /// normalized by the initial offset estimate — the logistic squashing
    /// otherwise makes near-zero background pixels slow to reach.
    void warm_start(const ScalarField2D& g0_h, const ScalarField2D& g0_v,
                    const TagParams& init) override;
    ad::Tensor decode(ad::Graph& g) override;
    ad::Tensor regularization(ad::Graph& g, ad::Tensor decoded) override;

private:
    int h_, w_;
    double lambda_tv_;
    ad::Param z_;
};

struct DisentangleOpts {
    int iterations{600};
    double lr_latent{1e-2};
    double lr_tags{1e-4};
    double tag_period_hint_mm{0.0}; // required; seeds the frequency estimate
    bool phase_multi_start{true};   // grid-search phase inits by initial loss
};

struct DisentangleResult {
    ScalarField2D anatomy; // decoded at the best-loss iterate
    TagParams params;
    double final_loss{std::numeric_limits<double>::infinity()};
    std::vector<double> loss_trajectory; // one entry per iteration
    bool degenerate_input{false};        // inputs were identically zero
};

/// Initial estimate: A=0.45, B=0.55, both phases at 2*pi, frequency from the
/// pulse-sequence tag-period hint.
TagParams init_tag_params(double tag_period_hint_mm);

DisentangleResult disentangle(const ScalarField2D& g0_h, const ScalarField2D& g0_v,
                              AnatomyPrior& prior, const DisentangleOpts& opts);

/// Model reconstruction at t=0: anatomy times each orientation's pattern.
std::pair<ScalarField2D, ScalarField2D> reconstruct_t0(const DisentangleResult& r);

/// Writes <prefix>.anatomy.tagseq (float32 raster) and <prefix>.result.json
/// (tag parameters, final loss, loss trajectory).
void save_disentangle_result(const std::string& prefix, const DisentangleResult& r);

} // namespace brite
