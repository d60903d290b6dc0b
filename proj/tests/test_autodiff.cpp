#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "brite/autodiff.hpp"
#include "brite/rng.hpp"

using namespace brite;
using ad::Graph;
using ad::Tensor;

namespace {

std::vector<double> random_values(uint64_t seed, size_t n, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Central finite-difference check: `build` constructs the scalar loss from a
// fresh graph and the given leaf values, returning (loss tensor, graph is
// implicit). Returns the max relative error over all leaf elements.
struct FdCheck {
    std::vector<std::vector<double>> leaves;
    std::function<double(Graph&, const std::vector<std::vector<double>>&, bool record_grads)>
        eval; // returns loss; when record_grads, runs backward and stores grads
    std::vector<std::vector<double>> grads;

    double run(double h = 1e-5, double floor = 1e-6) {
        {
            Graph g;
            eval(g, leaves, true);
        }
        double max_rel = 0.0;
        for (size_t li = 0; li < leaves.size(); ++li) {
            for (size_t i = 0; i < leaves[li].size(); ++i) {
                auto pert = leaves;
                pert[li][i] += h;
                Graph gp;
                const double fp = eval(gp, pert, false);
                pert[li][i] -= 2 * h;
                Graph gm;
                const double fm = eval(gm, pert, false);
                const double fd = (fp - fm) / (2 * h);
                const double an = grads[li][i];
                const double rel =
                    std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
                max_rel = std::max(max_rel, rel);
            }
        }
        return max_rel;
    }
};

// Convenience: single-leaf FD check where `f` maps the bound leaf to a loss.
double fd_check_unary(uint64_t seed, int rows, int cols,
                      const std::function<Tensor(Graph&, Tensor)>& f, double lo = -1.0,
                      double hi = 1.0) {
    FdCheck chk;
    chk.leaves = {random_values(seed, (size_t)rows * cols, lo, hi)};
    chk.eval = [&, rows, cols](Graph& g, const std::vector<std::vector<double>>& vals,
                               bool record) {
        Tensor x = g.leaf(rows, cols, vals[0]);
        Tensor loss = f(g, x);
        const double v = g.value_scalar(loss);
        if (record) {
            g.backward(loss);
            chk.grads = {g.grad(x)};
        }
        return v;
    };
    return chk.run();
}

// Weighted sum turns a tensor into a scalar with distinct per-element weights
// so gradient errors cannot cancel.
Tensor weighted_sum(Graph& g, Tensor t, uint64_t seed) {
    auto w = random_values(seed, t.numel(), 0.5, 1.5);
    return g.sum(g.mul(t, g.constant(t.rows, t.cols, w)));
}

} // namespace

TEST_CASE("sine of zero is zero with unit derivative") {
    Graph g;
    Tensor x = g.leaf(1, 1, {0.0});
    Tensor y = g.sin(x);
    CHECK(g.value_scalar(y) == 0.0);
    g.backward(y);
    CHECK(g.grad(x)[0] == doctest::Approx(1.0));
}

TEST_CASE("mean of a constant tensor is that constant with 1/N gradients") {
    Graph g;
    const double c = 0.7321;
    Tensor x = g.leaf(3, 4, std::vector<double>(12, c));
    Tensor m = g.mean(x);
    CHECK(g.value_scalar(m) == doctest::Approx(c));
    g.backward(m);
    for (double gv : g.grad(x)) CHECK(gv == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("matmul gradients match central finite differences") {
    FdCheck chk;
    chk.leaves = {random_values(31, 4 * 5), random_values(32, 5 * 3)};
    chk.eval = [&](Graph& g, const std::vector<std::vector<double>>& vals, bool record) {
        Tensor a = g.leaf(4, 5, vals[0]);
        Tensor b = g.leaf(5, 3, vals[1]);
        Tensor loss = weighted_sum(g, g.matmul(a, b), 33);
        const double v = g.value_scalar(loss);
        if (record) {
            g.backward(loss);
            chk.grads = {g.grad(a), g.grad(b)};
        }
        return v;
    };
    CHECK(chk.run() < 1e-5);
}

TEST_CASE("matmul validates inner dimensions") {
    Graph g;
    Tensor a = g.leaf(2, 3, random_values(1, 6));
    Tensor b = g.leaf(2, 3, random_values(2, 6));
    CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
}

TEST_CASE("grid sample reproduces node values with one-hot image gradients") {
    Graph g;
    auto img_vals = random_values(41, 64);
    Tensor img = g.leaf(8, 8, img_vals);
    Tensor coords = g.constant(2, 2, std::vector<double>{3.0, 5.0, 6.0, 2.0});
    Tensor out = g.grid_sample(img, coords);
    CHECK(g.values(out)[0] == img_vals[5 * 8 + 3]);
    CHECK(g.values(out)[1] == img_vals[2 * 8 + 6]);
    g.backward(g.sum(out));
    const auto& gi = g.grad(img);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            const double want = (x == 3 && y == 5) || (x == 6 && y == 2) ? 1.0 : 0.0;
            CHECK(gi[(size_t)y * 8 + x] == doctest::Approx(want));
        }
    }
}

TEST_CASE("grid sample coordinate gradient equals the local interpolant slope") {
    Graph g;
    std::vector<double> img_vals(4, 0.0);
    img_vals[1] = 1.0; // (x=1,y=0)
    img_vals[3] = 1.0; // (x=1,y=1)
    Tensor img = g.constant(2, 2, img_vals);
    Tensor coords = g.leaf(1, 2, {0.5, 0.5});
    Tensor out = g.grid_sample(img, coords);
    CHECK(g.values(out)[0] == doctest::Approx(0.5));
    g.backward(g.sum(out));
    CHECK(g.grad(coords)[0] == doctest::Approx(1.0)); // slope along x
    CHECK(g.grad(coords)[1] == doctest::Approx(0.0));
}

TEST_CASE("grid sample gradients match finite differences away from cell edges") {
    // Interior coords offset at least 1e-3 from integer lattice lines.
    Rng rng(55);
    std::vector<double> cvals;
    for (int i = 0; i < 20; ++i) {
        for (int k = 0; k < 2; ++k) {
            double frac = rng.uniform(0.05, 0.95);
            cvals.push_back(1.0 + rng.below(5) + frac); // in (1, 7) minus edge zones
        }
    }
    FdCheck chk;
    chk.leaves = {random_values(56, 64), cvals};
    chk.eval = [&](Graph& g, const std::vector<std::vector<double>>& vals, bool record) {
        Tensor img = g.leaf(8, 8, vals[0]);
        Tensor coords = g.leaf(20, 2, vals[1]);
        Tensor loss = weighted_sum(g, g.grid_sample(img, coords), 57);
        const double v = g.value_scalar(loss);
        if (record) {
            g.backward(loss);
            chk.grads = {g.grad(img), g.grad(coords)};
        }
        return v;
    };
    CHECK(chk.run() < 1e-4);
}

TEST_CASE("non-finite coordinates cannot reach grid sample") {
    // Every construction path validates finiteness, so bad coordinates are
    // rejected at or before the sampling op.
    Graph g;
    Tensor img = g.constant(4, 4, 1.0);
    CHECK_THROWS_AS(g.grid_sample(img, g.leaf(1, 2, {std::nan(""), 0.0})), Error);
    Tensor raw = g.leaf(1, 2, {1e300, 1e300});
    CHECK_THROWS_AS(g.grid_sample(img, g.mul(raw, raw)), Error);
}

TEST_CASE("backward of a plain sum yields unit gradients") {
    Graph g;
    Tensor x = g.leaf(4, 4, random_values(61, 16));
    g.backward(g.sum(x));
    for (double gv : g.grad(x)) CHECK(gv == 1.0);
}

TEST_CASE("backward of mean squared error yields the textbook gradient") {
    Graph g;
    auto xv = random_values(62, 12);
    auto yv = random_values(63, 12);
    Tensor x = g.leaf(3, 4, xv);
    Tensor y = g.constant(3, 4, yv);
    g.backward(g.mean(g.square(g.sub(x, y))));
    const auto& gx = g.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) {
        CHECK(gx[i] == doctest::Approx(2.0 * (xv[i] - yv[i]) / 12.0).epsilon(1e-12));
    }
}

TEST_CASE("composite loss through sampling, sine, and matmul matches finite differences") {
    Rng rng(71);
    std::vector<double> cvals;
    for (int i = 0; i < 6; ++i) {
        cvals.push_back(1.0 + rng.below(5) + rng.uniform(0.05, 0.95));
        cvals.push_back(1.0 + rng.below(5) + rng.uniform(0.05, 0.95));
    }
    FdCheck chk;
    chk.leaves = {random_values(72, 64), cvals, random_values(73, 2 * 3)};
    chk.eval = [&](Graph& g, const std::vector<std::vector<double>>& vals, bool record) {
        Tensor img = g.leaf(8, 8, vals[0]);
        Tensor coords = g.leaf(6, 2, vals[1]);
        Tensor w = g.leaf(2, 3, vals[2]);
        Tensor sampled = g.grid_sample(img, coords);       // [6,1]
        Tensor s = g.sin(g.reshape(sampled, 3, 2));        // [3,2]
        Tensor loss = weighted_sum(g, g.matmul(s, w), 74); // [3,3] -> scalar
        const double v = g.value_scalar(loss);
        if (record) {
            g.backward(loss);
            chk.grads = {g.grad(img), g.grad(coords), g.grad(w)};
        }
        return v;
    };
    CHECK(chk.run() < 1e-4);
}

TEST_CASE("every differentiable op passes a finite-difference gradient check") {
    auto by_sum = [](Graph& g, Tensor t) { return g.sum(t); };
    (void)by_sum;
    CHECK(fd_check_unary(101, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.add(x, g.constant(3, 4, random_values(1, 12))), 102);
          }) < 1e-4);
    CHECK(fd_check_unary(103, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.sub(g.constant(3, 4, random_values(2, 12)), x), 104);
          }) < 1e-4);
    CHECK(fd_check_unary(105, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.mul(x, g.constant(3, 4, random_values(3, 12))), 106);
          }) < 1e-4);
    CHECK(fd_check_unary(107, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.neg(x), 108);
          }) < 1e-4);
    CHECK(fd_check_unary(109, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.scale(x, -2.7), 110);
          }) < 1e-4);
    CHECK(fd_check_unary(111, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.add_const(x, 1.3), 112);
          }) < 1e-4);
    CHECK(fd_check_unary(113, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.sin(x), 114);
          }) < 1e-4);
    CHECK(fd_check_unary(115, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.tanh(x), 116);
          }) < 1e-4);
    CHECK(fd_check_unary(117, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.sigmoid(x), 118);
          }) < 1e-4);
    CHECK(fd_check_unary(119, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.softplus(x), 120);
          }) < 1e-4);
    CHECK(fd_check_unary(121, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.square(x), 122);
          }) < 1e-4);
    CHECK(fd_check_unary(123, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.sqrt(x), 124);
          }, 0.5, 2.0) < 1e-4);
    CHECK(fd_check_unary(125, 4, 6, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.reshape(x, 3, 8), 126);
          }) < 1e-4);
    CHECK(fd_check_unary(127, 5, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.slice_rows(x, 1, 4), 128);
          }) < 1e-4);
    CHECK(fd_check_unary(129, 5, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.slice_cols(x, 1, 3), 130);
          }) < 1e-4);
    CHECK(fd_check_unary(131, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.concat_rows(x, g.constant(2, 4, random_values(4, 8))),
                                  132);
          }) < 1e-4);
    CHECK(fd_check_unary(133, 3, 4, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.concat_cols(g.constant(3, 2, random_values(5, 6)), x),
                                  134);
          }) < 1e-4);
    CHECK(fd_check_unary(135, 4, 3, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.add_rowvec(x, g.constant(1, 3, random_values(6, 3))),
                                  136);
          }) < 1e-4);
    CHECK(fd_check_unary(137, 1, 3, [](Graph& g, Tensor x) {
              return weighted_sum(g, g.add_rowvec(g.constant(4, 3, random_values(7, 12)), x),
                                  138);
          }) < 1e-4);
    CHECK(fd_check_unary(139, 3, 4, [](Graph& g, Tensor x) { return g.mean(x); }) < 1e-4);
    CHECK(fd_check_unary(141, 1, 1, [](Graph& g, Tensor x) {
              return g.sum(g.mul(x, g.constant(2, 3, random_values(8, 6))));
          }) < 1e-4); // scalar broadcast
    // fused linear: gradient w.r.t. each of x, W, b, with and without the
    // activation
    for (const bool act : {false, true}) {
        CHECK(fd_check_unary(143, 5, 3, [act](Graph& g, Tensor x) {
                  return weighted_sum(g,
                                      g.linear(x, g.constant(3, 4, random_values(9, 12)),
                                               g.constant(1, 4, random_values(10, 4)), act),
                                      144);
              }) < 1e-4);
        CHECK(fd_check_unary(145, 3, 4, [act](Graph& g, Tensor w) {
                  return weighted_sum(g,
                                      g.linear(g.constant(5, 3, random_values(11, 15)), w,
                                               g.constant(1, 4, random_values(12, 4)), act),
                                      146);
              }) < 1e-4);
        CHECK(fd_check_unary(147, 1, 4, [act](Graph& g, Tensor b) {
                  return weighted_sum(g,
                                      g.linear(g.constant(5, 3, random_values(13, 15)),
                                               g.constant(3, 4, random_values(14, 12)), b, act),
                                      148);
              }) < 1e-4);
    }
}

TEST_CASE("fused linear matches the unfused composition") {
    auto xv = random_values(201, 40 * 16);
    auto wv = random_values(202, 16 * 8);
    auto bv = random_values(203, 8);
    for (const bool act : {false, true}) {
        Graph g;
        Tensor x = g.constant(40, 16, xv);
        Tensor w = g.constant(16, 8, wv);
        Tensor b = g.constant(1, 8, bv);
        Tensor fused = g.linear(x, w, b, act);
        Tensor plain = g.add_rowvec(g.matmul(x, w), b);
        if (act) plain = g.tanh(plain);
        REQUIRE(fused.rows == 40);
        REQUIRE(fused.cols == 8);
        const auto& fv = g.values(fused);
        const auto& pv = g.values(plain);
        for (size_t i = 0; i < fv.size(); ++i)
            CHECK(fv[i] == doctest::Approx(pv[i]).epsilon(1e-12));
    }
}

TEST_CASE("fused linear validates shapes") {
    Graph g;
    Tensor x = g.constant(4, 3, random_values(204, 12));
    Tensor w = g.constant(3, 5, random_values(205, 15));
    Tensor bad_w = g.constant(2, 5, random_values(206, 10));
    Tensor b = g.constant(1, 5, random_values(207, 5));
    Tensor bad_b = g.constant(1, 4, random_values(208, 4));
    CHECK_THROWS_AS((void)g.linear(x, bad_w, b, true), ShapeError);
    CHECK_THROWS_AS((void)g.linear(x, w, bad_b, true), ShapeError);
    CHECK_NOTHROW((void)g.linear(x, w, b, false));
}

TEST_CASE("gradient accumulation is linear across summed losses") {
    auto xv = random_values(151, 20);
    std::vector<double> grad_sum;
    {
        Graph g;
        Tensor x = g.leaf(4, 5, xv);
        Tensor l1 = g.sum(g.square(x));
        Tensor l2 = g.mean(g.sin(x));
        g.backward(g.add(l1, l2));
        grad_sum = g.grad(x);
    }
    std::vector<double> g1, g2;
    {
        Graph g;
        Tensor x = g.leaf(4, 5, xv);
        g.backward(g.sum(g.square(x)));
        g1 = g.grad(x);
    }
    {
        Graph g;
        Tensor x = g.leaf(4, 5, xv);
        g.backward(g.mean(g.sin(x)));
        g2 = g.grad(x);
    }
    for (size_t i = 0; i < grad_sum.size(); ++i) {
        CHECK(grad_sum[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward rejects non-scalar losses and repeated invocation") {
    Graph g;
    Tensor x = g.leaf(2, 2, random_values(161, 4));
    CHECK_THROWS_AS(g.backward(x), InvalidInput);
    Tensor loss = g.sum(x);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), InvalidInput);
}

TEST_CASE("non-finite results are flagged as numeric errors") {
    Graph g;
    Tensor x = g.leaf(1, 2, {-4.0, 1.0});
    CHECK_THROWS_AS(g.sqrt(x), NumericError);
    CHECK_THROWS_AS(g.leaf(1, 1, {std::numeric_limits<double>::quiet_NaN()}), InvalidInput);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ad::Param p(2, 2, 0.0);
    p.value = {1.0, -2.0, 3.0, -4.0};
    const auto before = p.value;
    ad::Adam opt;
    opt.add_group({&p}, 0.1);
    Graph g;
    Tensor x = bind(g, p);
    Tensor other = g.leaf(1, 1, {5.0});
    g.backward(g.square(other)); // p plays no part; its gradient is zero
    opt.step(g);
    CHECK(p.value == before);
}

TEST_CASE("first adam step moves each parameter by about lr in the gradient sign") {
    // Scalar oracle: with zero moments, first update is
    // lr * g/(sqrt(g^2) + eps) ≈ lr * sign(g), independent of |g|.
    ad::Param p(1, 3, 0.0);
    p.value = {0.5, -0.25, 1.5};
    ad::Adam opt;
    const double lr = 0.05;
    opt.add_group({&p}, lr);
    Graph g;
    Tensor x = bind(g, p);
    // loss = sum(w*x): gradient = w = (2, -3, 0.5)
    Tensor w = g.constant(1, 3, std::vector<double>{2.0, -3.0, 0.5});
    g.backward(g.sum(g.mul(x, w)));
    opt.step(g);
    CHECK(p.value[0] == doctest::Approx(0.5 - lr).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(-0.25 + lr).epsilon(1e-6));
    CHECK(p.value[2] == doctest::Approx(1.5 - lr).epsilon(1e-6));

    // Cross-check the raw kernel against a hand-rolled scalar sequence.
    double val = 0.5, m = 0.0, v = 0.0;
    double g0 = 2.0;
    double mm = 0.9 * m + 0.1 * g0;
    double vv = 0.999 * v + 0.001 * g0 * g0;
    double val_want = val - lr * (mm / (1 - 0.9)) / (std::sqrt(vv / (1 - 0.999)) + 1e-8);
    double m2 = 0.0, v2 = 0.0;
    ad::adam_update(&val, &g0, &m2, &v2, 1, 1, lr);
    CHECK(val == doctest::Approx(val_want).epsilon(1e-12));
}

TEST_CASE("adam descends a quadratic bowl to the minimum") {
    ad::Param p(1, 2, 0.0);
    p.value = {1.0, 1.0};
    ad::Adam opt;
    opt.add_group({&p}, 0.1);
    for (int it = 0; it < 200; ++it) {
        Graph g;
        Tensor x = bind(g, p);
        g.backward(g.sum(g.square(x)));
        opt.step(g);
    }
    CHECK(std::hypot(p.value[0], p.value[1]) < 1e-3);
}

TEST_CASE("identical seeds give bit-identical optimization trajectories") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        ad::Param w(2, 2, 0.0);
        for (auto& v : w.value) v = rng.normal(0.0, 0.3);
        ad::Adam opt;
        opt.add_group({&w}, 1e-2);
        std::vector<double> trace;
        auto data = random_values(seed + 1, 4, -1.0, 1.0);
        for (int it = 0; it < 50; ++it) {
            Graph g;
            Tensor x = bind(g, w);
            Tensor target = g.constant(2, 2, data);
            Tensor loss = g.sum(g.square(g.sub(g.tanh(x), target)));
            trace.push_back(g.value_scalar(loss));
            g.backward(loss);
            opt.step(g);
        }
        trace.insert(trace.end(), w.value.begin(), w.value.end());
        return trace;
    };
    auto a = run(977), b = run(977);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("elementwise ops reject shape mismatches") {
    Graph g;
    Tensor a = g.leaf(2, 3, random_values(171, 6));
    Tensor b = g.leaf(3, 2, random_values(172, 6));
    CHECK_THROWS_AS(g.add(a, b), ShapeError);
    CHECK_THROWS_AS(g.mul(a, b), ShapeError);
    CHECK_THROWS_AS(g.concat_rows(a, g.leaf(2, 2, random_values(173, 4))), ShapeError);
    CHECK_THROWS_AS(g.reshape(a, 4, 2), ShapeError);
}
