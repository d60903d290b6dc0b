// Micro-benchmark for the optimization hot path: one forward+backward pass of
// the coordinate network over a full pixel grid. Prints ms per iteration.

#include <chrono>
#include <cstdio>
#include <vector>

#include "brite/autodiff.hpp"
#include "brite/rng.hpp"

using namespace brite;
using ad::Graph;
using ad::Tensor;

int main(int argc, char** argv) {
    const int side = argc > 1 ? std::atoi(argv[1]) : 64;
    const int iters = argc > 2 ? std::atoi(argv[2]) : 10;
    const int n = side * side;
    const int hidden = 128;

    Rng rng(7);
    ad::Param w1(2, hidden), b1(1, hidden), w2(hidden, hidden), b2(1, hidden), w3(hidden, hidden),
        b3(1, hidden), wo(hidden, 2), bo(1, 2);
    for (auto* p : {&w1, &w2, &w3}) {
        for (auto& v : p->value) v = rng.normal(0.0, 0.1);
    }
    std::vector<double> coords(2 * n);
    for (int i = 0; i < n; ++i) {
        coords[2 * i] = (i % side) / double(side);
        coords[2 * i + 1] = (i / side) / double(side);
    }
    std::vector<double> img(n);
    for (auto& v : img) v = rng.uniform(0.0, 1.0);

    ad::Adam opt;
    opt.add_group({&w1, &b1, &w2, &b2, &w3, &b3, &wo, &bo}, 1e-4);

    auto t0 = std::chrono::steady_clock::now();
    double loss_val = 0.0;
    for (int it = 0; it < iters; ++it) {
        Graph g;
        Tensor x = g.constant(n, 2, coords);
        Tensor h1 = g.linear(x, bind(g, w1), bind(g, b1), true);
        Tensor h2 = g.linear(h1, bind(g, w2), bind(g, b2), true);
        Tensor h3 = g.linear(h2, bind(g, w3), bind(g, b3), true);
        Tensor v = g.linear(h3, bind(g, wo), bind(g, bo), false);
        // displacement-like use: shift coords, sample an image, match target
        Tensor shifted = g.add(x, v);
        Tensor sampled = g.grid_sample(g.constant(side, side, img), shifted);
        Tensor loss = g.sum(g.square(sampled));
        loss_val = g.value_scalar(loss);
        g.backward(loss);
        opt.step(g);
    }
    auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
    std::printf("grid %dx%d  hidden %d  %.1f ms/iter  (last loss %.6g)\n", side, side, hidden, ms,
                loss_val);
    return 0;
}
