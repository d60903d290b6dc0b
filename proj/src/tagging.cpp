#include "brite/tagging.hpp"

#include <cmath>
#include <limits>

namespace brite {

FadingParams FadingParams::none() {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, 0.0, inf, "none"};
}

FadingParams FadingParams::by_name(const std::string& name) {
    if (name == "FA5") return fa5();
    if (name == "FA10") return fa10();
    if (name == "none") return none();
    throw InvalidInput("unknown fading preset: " + name);
}

std::pair<double, double> fade(const TagParams& params, const FadingParams& fading, double t_s) {
    if (t_s < 0.0) throw InvalidInput("fade: time must be nonnegative");
    const double a_t = params.A * std::exp(-t_s / fading.tau_A);
    const double b_t = fading.B_inf - (fading.B_inf - params.B) * std::exp(-t_s / fading.tau_B);
    return {a_t, b_t};
}

double tag_value(double A, double B, double mu, double phi, double coord_mm) {
    const double v = A * std::sin(2.0 * M_PI * mu * coord_mm + phi) + B;
    return v < 0.0 ? 0.0 : v;
}

ScalarField2D tag_pattern_at(const TagParams& params, Orientation orientation, double A_t,
                             double B_t, int h, int w, double sx_mm, double sy_mm) {
    if (!(params.mu > 0.0)) throw InvalidInput("tag_pattern: mu must be positive");
    ScalarField2D out(h, w, sx_mm, sy_mm);
    if (orientation == Orientation::Vertical) {
        for (int x = 0; x < w; ++x) {
            const double v = tag_value(A_t, B_t, params.mu, params.phi_v, x * sx_mm);
            for (int y = 0; y < h; ++y) out.at(x, y) = v;
        }
    } else {
        for (int y = 0; y < h; ++y) {
            const double v = tag_value(A_t, B_t, params.mu, params.phi_h, y * sy_mm);
            for (int x = 0; x < w; ++x) out.at(x, y) = v;
        }
    }
    return out;
}

ScalarField2D tag_pattern(const TagParams& params, Orientation orientation, int h, int w,
                          double sx_mm, double sy_mm) {
    return tag_pattern_at(params, orientation, params.A, params.B, h, w, sx_mm, sy_mm);
}

void TaggedSequence::validate() const {
    if (frames_h.empty()) throw InvalidInput("TaggedSequence: at least one frame required");
    if (frames_h.size() != frames_v.size() || frames_h.size() != times_s.size()) {
        throw ShapeError("TaggedSequence: frame/timestamp counts differ");
    }
    for (size_t i = 0; i < frames_h.size(); ++i) {
        if (!frames_h[i].same_shape(frames_h[0]) || !frames_v[i].same_shape(frames_h[0])) {
            throw ShapeError("TaggedSequence: frame shapes differ");
        }
        if (i > 0 && !(times_s[i] > times_s[i - 1])) {
            throw InvalidInput("TaggedSequence: timestamps must be strictly increasing");
        }
    }
    if (has_truth && gt_motion.size() != frames_h.size()) {
        throw ShapeError("TaggedSequence: ground-truth motion count differs from frames");
    }
}

} // namespace brite
