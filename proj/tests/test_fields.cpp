#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "brite/errors.hpp"
#include "brite/fields.hpp"
#include "brite/rng.hpp"
#include "oracles.hpp"

using namespace brite;

namespace {

ScalarField2D random_scalar(uint64_t seed, int h, int w) {
    Rng rng(seed);
    ScalarField2D f(h, w);
    for (auto& v : f.data) v = rng.uniform(-1.0, 1.0);
    return f;
}

VectorField2D random_vector(uint64_t seed, int h, int w, double amp) {
    Rng rng(seed);
    VectorField2D d(h, w);
    for (size_t i = 0; i < d.dx.size(); ++i) {
        d.dx[i] = rng.uniform(-amp, amp);
        d.dy[i] = rng.uniform(-amp, amp);
    }
    return d;
}

VectorField2D constant_field(int h, int w, double cx, double cy) {
    VectorField2D d(h, w);
    std::fill(d.dx.begin(), d.dx.end(), cx);
    std::fill(d.dy.begin(), d.dy.end(), cy);
    return d;
}

double max_norm(const VectorField2D& d) {
    double m = 0.0;
    for (size_t i = 0; i < d.dx.size(); ++i) m = std::max(m, std::hypot(d.dx[i], d.dy[i]));
    return m;
}

double max_abs_masked(const ScalarField2D& f, const Mask2D& m) {
    double v = 0.0;
    for (size_t i = 0; i < f.data.size(); ++i)
        if (m.on[i]) v = std::max(v, std::abs(f.data[i]));
    return v;
}

} // namespace

TEST_CASE("scalar field construction validates shape and spacing") {
    CHECK_THROWS_AS(ScalarField2D(1, 8), InvalidInput);
    CHECK_THROWS_AS(ScalarField2D(8, 1), InvalidInput);
    CHECK_THROWS_AS(ScalarField2D(8, 8, 0.0, 1.0), InvalidInput);
    CHECK_THROWS_AS(ScalarField2D(8, 8, 1.0, -2.0), InvalidInput);
    ScalarField2D ok(2, 2);
    CHECK(ok.data.size() == 4);
}

TEST_CASE("bilinear sample at a grid node returns the stored value") {
    auto f = random_scalar(11, 8, 8);
    CHECK(bilinear_sample(f, 3.0, 5.0) == f.at(3, 5));
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(bilinear_sample(f, x, y) == f.at(x, y));
}

TEST_CASE("bilinear sample at midpoint of 0 and 1 gives 0.5") {
    ScalarField2D f(2, 2);
    f.at(0, 0) = 0.0;
    f.at(1, 0) = 1.0;
    f.at(0, 1) = 0.0;
    f.at(1, 1) = 1.0;
    CHECK(bilinear_sample(f, 0.5, 0.0) == doctest::Approx(0.5));
    CHECK(bilinear_sample(f, 0.5, 0.7) == doctest::Approx(0.5));
}

TEST_CASE("bilinear sample clamps out-of-range coordinates to the border") {
    auto f = random_scalar(7, 6, 6);
    CHECK(bilinear_sample(f, -2.7, 0.0) == f.at(0, 0));
    CHECK(bilinear_sample(f, 100.0, 100.0) == f.at(5, 5));
    CHECK(bilinear_sample(f, 2.5, -9.0) == bilinear_sample(f, 2.5, 0.0));
}

TEST_CASE("bilinear sample rejects non-finite coordinates") {
    auto f = random_scalar(3, 4, 4);
    CHECK_THROWS_AS(bilinear_sample(f, std::nan(""), 0.0), InvalidInput);
    CHECK_THROWS_AS(bilinear_sample(f, 0.0, std::numeric_limits<double>::infinity()),
                    InvalidInput);
}

TEST_CASE("bilinear sample matches the brute-force oracle at random points") {
    auto f = random_scalar(21, 16, 13);
    Rng rng(22);
    for (int i = 0; i < 500; ++i) {
        double x = rng.uniform(-3.0, 16.0);
        double y = rng.uniform(-3.0, 19.0);
        CHECK(bilinear_sample(f, x, y) == doctest::Approx(oracle::bilinear(f, x, y)).epsilon(1e-13));
    }
}

TEST_CASE("warp with zero displacement is the identity") {
    auto f = random_scalar(31, 10, 12);
    auto out = warp(f, VectorField2D(10, 12));
    for (size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(f.data[i]));
}

TEST_CASE("warp by unit x displacement shifts a linear ramp by its slope") {
    const double slope = 0.37;
    ScalarField2D f(9, 9);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) f.at(x, y) = slope * x;
    auto out = warp(f, constant_field(9, 9, 1.0, 0.0));
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 8; ++x)
            CHECK(out.at(x, y) - f.at(x, y) == doctest::Approx(slope).epsilon(1e-12));
}

TEST_CASE("warp of a random 8x8 field matches a per-pixel oracle") {
    auto f = random_scalar(41, 8, 8);
    auto d = random_vector(42, 8, 8, 2.5);
    auto out = warp(f, d);
    double max_diff = 0.0;
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            double want = oracle::bilinear(f, x + d.dx[d.idx(x, y)], y + d.dy[d.idx(x, y)]);
            max_diff = std::max(max_diff, std::abs(out.at(x, y) - want));
        }
    }
    CHECK(max_diff < 1e-12);
}

TEST_CASE("warp rejects shape mismatch") {
    auto f = random_scalar(5, 8, 8);
    CHECK_THROWS_AS(warp(f, VectorField2D(8, 9)), ShapeError);
}

TEST_CASE("compose with the zero field is the identity element") {
    auto d = random_vector(51, 12, 12, 1.5);
    VectorField2D zero(12, 12);
    auto left = compose(zero, d);
    for (size_t i = 0; i < d.dx.size(); ++i) {
        CHECK(left.dx[i] == doctest::Approx(d.dx[i]).epsilon(1e-12));
        CHECK(left.dy[i] == doctest::Approx(d.dy[i]).epsilon(1e-12));
    }
    // compose(d, 0): inner displacement zero, so result samples d at the node.
    auto right = compose(d, zero);
    for (size_t i = 0; i < d.dx.size(); ++i) {
        CHECK(right.dx[i] == doctest::Approx(d.dx[i]).epsilon(1e-12));
        CHECK(right.dy[i] == doctest::Approx(d.dy[i]).epsilon(1e-12));
    }
}

TEST_CASE("composition of constant translations adds them on interior points") {
    auto a = constant_field(16, 16, 0.8, -0.3);
    auto b = constant_field(16, 16, -0.2, 1.1);
    auto c = compose(a, b);
    auto interior = interior_mask(16, 16, 3);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            if (!interior.on[c.idx(x, y)]) continue;
            CHECK(c.dx[c.idx(x, y)] == doctest::Approx(0.6).epsilon(1e-12));
            CHECK(c.dy[c.idx(x, y)] == doctest::Approx(0.8).epsilon(1e-12));
        }
    }
}

TEST_CASE("composing two 5 degree rotations matches the analytic 10 degree field") {
    const int n = 64;
    const double c = (n - 1) / 2.0;
    auto r5 = oracle::rotation_field(n, n, 5.0, c, c);
    auto r10 = oracle::rotation_field(n, n, 10.0, c, c);
    auto got = compose(r5, r5);
    auto interior = interior_mask(n, n, 4);
    double max_err = 0.0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            if (!interior.on[got.idx(x, y)]) continue;
            double ex = got.dx[got.idx(x, y)] - r10.dx[r10.idx(x, y)];
            double ey = got.dy[got.idx(x, y)] - r10.dy[r10.idx(x, y)];
            max_err = std::max(max_err, std::hypot(ex, ey));
        }
    }
    CHECK(max_err < 0.05);
}

TEST_CASE("compose rejects shape mismatch") {
    CHECK_THROWS_AS(compose(VectorField2D(8, 8), VectorField2D(9, 8)), ShapeError);
}

TEST_CASE("exponential map of the zero velocity is the identity diffeomorphism") {
    auto d = exp_map(VectorField2D(16, 16));
    CHECK(max_norm(d.forward) == doctest::Approx(0.0));
    CHECK(max_norm(d.inverse) == doctest::Approx(0.0));
    CHECK(d.n_squaring_steps == 7);
}

TEST_CASE("exponential map of a constant velocity is that translation") {
    auto d = exp_map(constant_field(32, 32, 1.3, -0.7));
    auto interior = interior_mask(32, 32, 4);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            if (!interior.on[(size_t)y * 32 + x]) continue;
            CHECK(std::abs(d.forward.dx[(size_t)y * 32 + x] - 1.3) < 1e-6);
            CHECK(std::abs(d.forward.dy[(size_t)y * 32 + x] + 0.7) < 1e-6);
            CHECK(std::abs(d.inverse.dx[(size_t)y * 32 + x] + 1.3) < 1e-6);
            CHECK(std::abs(d.inverse.dy[(size_t)y * 32 + x] - 0.7) < 1e-6);
        }
    }
}

TEST_CASE("exponential map of a rotational velocity matches the analytic rotation") {
    const int n = 64;
    const double omega = 0.26; // radians
    const double cx = (n - 1) / 2.0, cy = (n - 1) / 2.0;
    VectorField2D vel(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            vel.dx[vel.idx(x, y)] = -omega * (y - cy);
            vel.dy[vel.idx(x, y)] = omega * (x - cx);
        }
    }
    auto d = exp_map(vel, 7);
    auto want = oracle::rotation_field(n, n, omega * 180.0 / M_PI, cx, cy);
    auto interior = interior_mask(n, n, 8);
    double max_err = 0.0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            if (!interior.on[d.forward.idx(x, y)]) continue;
            double ex = d.forward.dx[d.forward.idx(x, y)] - want.dx[want.idx(x, y)];
            double ey = d.forward.dy[d.forward.idx(x, y)] - want.dy[want.idx(x, y)];
            max_err = std::max(max_err, std::hypot(ex, ey));
        }
    }
    CHECK(max_err < 0.1);
}

TEST_CASE("exponential map rejects non-finite velocity and bad step counts") {
    VectorField2D v(8, 8);
    v.dx[3] = std::nan("");
    CHECK_THROWS_AS(exp_map(v), InvalidInput);
    CHECK_THROWS_AS(exp_map(VectorField2D(8, 8), 0), InvalidInput);
}

TEST_CASE("forward-then-inverse residual stays small for smooth bounded velocities") {
    // Property over a family of seeded smooth fields, |u| <= 5 px at 64x64.
    for (uint64_t seed = 100; seed < 110; ++seed) {
        auto u = oracle::smooth_random_field(seed, 64, 64, 5.0);
        auto d = exp_map(u, 7);
        CHECK(inverse_consistency_residual(d, 8) < 0.1);
        auto jd = jacobian_determinant(d.forward);
        CHECK(min_over_mask(jd, interior_mask(64, 64, 8)) > 0.0);
    }
}

TEST_CASE("compose is associative within interpolation tolerance") {
    auto a = oracle::smooth_random_field(201, 64, 64, 0.5, 32);
    auto b = oracle::smooth_random_field(202, 64, 64, 0.5, 32);
    auto c = oracle::smooth_random_field(203, 64, 64, 0.5, 32);
    auto left = compose(compose(a, b), c);
    auto right = compose(a, compose(b, c));
    auto interior = interior_mask(64, 64, 6);
    double max_err = 0.0;
    for (size_t i = 0; i < left.dx.size(); ++i) {
        if (!interior.on[i]) continue;
        max_err = std::max(max_err, std::hypot(left.dx[i] - right.dx[i], left.dy[i] - right.dy[i]));
    }
    CHECK(max_err < 1e-3);
}

TEST_CASE("jacobian determinant of zero displacement is one everywhere") {
    auto jd = jacobian_determinant(VectorField2D(10, 10));
    for (double v : jd.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("jacobian determinant of uniform scaling is the squared factor") {
    const int n = 32;
    const double s = 1.15, c = (n - 1) / 2.0;
    VectorField2D d(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            d.dx[d.idx(x, y)] = (s - 1.0) * (x - c);
            d.dy[d.idx(x, y)] = (s - 1.0) * (y - c);
        }
    }
    auto jd = jacobian_determinant(d);
    auto interior = interior_mask(n, n, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (interior.at(x, y)) CHECK(jd.at(x, y) == doctest::Approx(s * s).epsilon(1e-9));
}

TEST_CASE("jacobian determinant matches the independent stencil oracle") {
    auto d = oracle::smooth_random_field(301, 24, 21, 2.0);
    auto jd = jacobian_determinant(d);
    double max_err = 0.0;
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 21; ++x)
            max_err = std::max(max_err, std::abs(jd.at(x, y) - oracle::jacdet_at(d, x, y)));
    CHECK(max_err < 1e-10);
}

TEST_CASE("strain of zero displacement is zero everywhere") {
    auto mps = max_principal_strain(VectorField2D(12, 12));
    for (double v : mps.data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("strain of a rigid rotation vanishes on interior points") {
    for (double deg : {3.0, 15.0, 40.0}) {
        auto d = oracle::rotation_field(40, 40, deg, 19.5, 19.5);
        auto mps = max_principal_strain(d);
        CHECK(max_abs_masked(mps, interior_mask(40, 40, 1)) < 1e-3);
    }
}

TEST_CASE("strain of a uniaxial stretch matches the analytic value") {
    const int n = 24;
    const double lambda = 1.1;
    VectorField2D d(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) d.dx[d.idx(x, y)] = (lambda - 1.0) * x;
    auto mps = max_principal_strain(d);
    auto interior = interior_mask(n, n, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (interior.at(x, y))
                CHECK(mps.at(x, y) == doctest::Approx((lambda * lambda - 1.0) / 2.0).epsilon(1e-9));
}

TEST_CASE("strain matches the independent eigen-decomposition oracle") {
    auto d = oracle::smooth_random_field(401, 20, 26, 2.0);
    auto mps = max_principal_strain(d);
    double max_err = 0.0;
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 26; ++x)
            max_err = std::max(max_err, std::abs(mps.at(x, y) - oracle::mps_at(d, x, y)));
    CHECK(max_err < 1e-10);
}

TEST_CASE("endpoint error of identical fields is zero") {
    auto d = random_vector(501, 9, 9, 3.0);
    auto e = epe(d, d);
    for (double v : e.data) CHECK(v == 0.0);
}

TEST_CASE("endpoint error of fields differing by (3,4) is five") {
    auto a = random_vector(502, 9, 9, 3.0);
    auto b = a;
    for (auto& v : b.dx) v += 3.0;
    for (auto& v : b.dy) v += 4.0;
    auto e = epe(a, b);
    for (double v : e.data) CHECK(v == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("endpoint error matches the scalar loop oracle exactly") {
    auto a = random_vector(503, 11, 14, 3.0);
    auto b = random_vector(504, 11, 14, 3.0);
    auto e = epe(a, b);
    auto want = oracle::epe_loop(a, b);
    for (size_t i = 0; i < want.size(); ++i) CHECK(e.data[i] == want[i]);
}

TEST_CASE("endpoint error rejects shape mismatch and is symmetric") {
    CHECK_THROWS_AS(epe(VectorField2D(8, 8), VectorField2D(8, 7)), ShapeError);
    auto a = random_vector(505, 10, 10, 2.0);
    auto b = random_vector(506, 10, 10, 2.0);
    auto ab = epe(a, b), ba = epe(b, a);
    for (size_t i = 0; i < ab.data.size(); ++i) CHECK(ab.data[i] == ba.data[i]);
}

TEST_CASE("strain error of identical fields is zero") {
    auto d = random_vector(601, 9, 9, 2.0);
    auto e = emps(d, d);
    for (double v : e.data) CHECK(v == 0.0);
}

TEST_CASE("strain error between a rigid rotation and identity vanishes on interior") {
    auto rot = oracle::rotation_field(32, 32, 12.0, 15.5, 15.5);
    VectorField2D zero(32, 32);
    auto e = emps(rot, zero);
    CHECK(max_abs_masked(e, interior_mask(32, 32, 1)) < 1e-3);
}

TEST_CASE("strain error matches the compositional oracle and is symmetric") {
    auto a = oracle::smooth_random_field(602, 18, 18, 1.5);
    auto b = oracle::smooth_random_field(603, 18, 18, 1.5);
    auto e = emps(a, b);
    auto ma = max_principal_strain(a);
    auto mb = max_principal_strain(b);
    for (size_t i = 0; i < e.data.size(); ++i)
        CHECK(e.data[i] == std::abs(ma.data[i] - mb.data[i]));
    auto e2 = emps(b, a);
    for (size_t i = 0; i < e.data.size(); ++i) CHECK(e.data[i] == e2.data[i]);
}

TEST_CASE("masked statistics match hand-computed quartiles") {
    ScalarField2D f(2, 3);
    // values 1..6 row-major: quartiles of {1,2,3,4,5,6}
    for (int i = 0; i < 6; ++i) f.data[i] = i + 1.0;
    Mask2D all(2, 3);
    std::fill(all.on.begin(), all.on.end(), 1);
    auto s = stats_over_mask(f, all);
    CHECK(s.n == 6);
    CHECK(s.mean == doctest::Approx(3.5));
    CHECK(s.median == doctest::Approx(3.5));
    CHECK(s.q1 == doctest::Approx(2.25));
    CHECK(s.q3 == doctest::Approx(4.75));

    Mask2D some(2, 3);
    some.on[0] = some.on[2] = some.on[5] = 1; // values 1, 3, 6
    auto s2 = stats_over_mask(f, some);
    CHECK(s2.n == 3);
    CHECK(s2.mean == doctest::Approx(10.0 / 3.0));
    CHECK(s2.median == doctest::Approx(3.0));
}

TEST_CASE("masked statistics reject an empty mask") {
    ScalarField2D f(4, 4);
    Mask2D none(4, 4);
    CHECK_THROWS_AS(stats_over_mask(f, none), InvalidInput);
}

TEST_CASE("interior mask and erosion shrink the support as expected") {
    auto m = interior_mask(8, 8, 2);
    CHECK(m.count() == 16);
    Mask2D blob(7, 7);
    for (int y = 1; y <= 5; ++y)
        for (int x = 1; x <= 5; ++x) blob.on[(size_t)y * 7 + x] = 1;
    auto e1 = erode(blob, 1);
    CHECK(e1.count() == 9);
    auto e2 = erode(blob, 2);
    CHECK(e2.count() == 1);
    auto e3 = erode(blob, 3);
    CHECK(e3.count() == 0);
}

TEST_CASE("diffeo inverse-consistency residual is near zero for a translation") {
    auto d = exp_map(constant_field(24, 24, 0.9, -0.4));
    CHECK(inverse_consistency_residual(d, 4) < 1e-6);
}
