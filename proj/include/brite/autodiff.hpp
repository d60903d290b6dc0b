#pragma once

// Minimal reverse-mode automatic differentiation over dense 2D tensors.
//
// A Graph is a define-by-run tape: every op appends a node holding its values
// and a backward closure. Graphs are rebuilt each optimization iteration and
// confined to a single thread. All arithmetic is 64-bit.

#include <cstdint>
#include <functional>
#include <vector>

#include "brite/errors.hpp"

namespace brite::ad {

/// Lightweight handle into a Graph's node list.
struct Tensor {
    int id{-1};
    int rows{0};
    int cols{0};

    size_t numel() const { return static_cast<size_t>(rows) * cols; }
    bool valid() const { return id >= 0; }
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // -- graph inputs ------------------------------------------------------
    /// Differentiable input (gradient is tracked).
    Tensor leaf(int rows, int cols, const std::vector<double>& values);
    /// Non-differentiable input.
    Tensor constant(int rows, int cols, const std::vector<double>& values);
    Tensor constant(int rows, int cols, double fill);
    Tensor scalar(double v) { return constant(1, 1, std::vector<double>{v}); }

    // -- elementwise arithmetic (same shape, or either operand 1x1) ---------
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);
    Tensor neg(Tensor a);
    Tensor scale(Tensor a, double s);
    Tensor add_const(Tensor a, double c);

    // -- elementwise functions ----------------------------------------------
    Tensor sin(Tensor a);
    Tensor tanh(Tensor a);
    Tensor sigmoid(Tensor a);
    Tensor softplus(Tensor a);
    Tensor square(Tensor a);
    Tensor sqrt(Tensor a);

    // -- linear algebra ------------------------------------------------------
    /// [N,K] · [K,M] -> [N,M]
    Tensor matmul(Tensor a, Tensor b);
    /// [N,M] + broadcast [1,M]
    Tensor add_rowvec(Tensor a, Tensor row);
    /// Fused x·W + b (optionally through tanh) as a single node. Equivalent to
    /// tanh(add_rowvec(matmul(x, w), b)) but avoids materializing the two
    /// intermediate [N,M] tensors, which dominates run time when the network
    /// is evaluated over a full pixel grid.
    Tensor linear(Tensor x, Tensor w, Tensor b, bool apply_tanh);

    // -- reductions ----------------------------------------------------------
    Tensor sum(Tensor a);
    Tensor mean(Tensor a);

    // -- shape surgery ---------------------------------------------------------
    Tensor reshape(Tensor a, int rows, int cols);
    Tensor slice_rows(Tensor a, int r0, int r1);
    Tensor slice_cols(Tensor a, int c0, int c1);
    Tensor concat_rows(Tensor a, Tensor b);
    Tensor concat_cols(Tensor a, Tensor b);

    // -- sampling ---------------------------------------------------------------
    /// Bilinear sampling of image [H,W] at coords [N,2] (x in column 0, y in
    /// column 1), clamp padding. Gradients flow to both image and coords;
    /// coordinate gradients are zero where the coordinate was clamped.
    Tensor grid_sample(Tensor image, Tensor coords);

    // -- execution ------------------------------------------------------------
    /// Reverse accumulation from a scalar loss. Consumes the graph: calling
    /// twice without rebuilding is an error.
    void backward(Tensor loss);

    const std::vector<double>& values(Tensor t) const;
    /// Gradient of the last backward() w.r.t. tensor t (zeros if t did not
    /// influence the loss).
    const std::vector<double>& grad(Tensor t) const;
    double value_scalar(Tensor t) const;

    size_t n_nodes() const { return nodes_.size(); }

private:
    struct Node {
        int rows{0}, cols{0};
        std::vector<double> values;
        std::vector<double> grad;
        bool needs_grad{false};
        std::function<void()> back;
    };

    Tensor push(int rows, int cols, bool needs_grad);
    Node& node(Tensor t) { return nodes_[t.id]; }
    const Node& node(Tensor t) const { return nodes_[t.id]; }
    std::vector<double>& grad_buf(int id);
    void check_finite_op(Tensor t, const char* op);
    Tensor binary_elementwise(Tensor a, Tensor b, const char* name, int kind);
    Tensor unary_map(Tensor a, const char* name, double (*f)(double), double (*df)(double, double));

    std::vector<Node> nodes_;
    bool consumed_{false};
    mutable std::vector<double> zero_grad_;
};

// ---------------------------------------------------------------------------
// Optimizable parameters and Adam.

/// A persistent optimization variable; re-bound into each new Graph.
struct Param {
    int rows{0}, cols{0};
    std::vector<double> value;
    Tensor node{};

    Param() = default;
    Param(int r, int c, double fill = 0.0)
        : rows(r), cols(c), value(static_cast<size_t>(r) * c, fill) {}
    size_t size() const { return value.size(); }
};

/// Creates a differentiable leaf holding p's current values and remembers the
/// handle on p so the optimizer can find its gradient after backward().
Tensor bind(Graph& g, Param& p);

/// One Adam update on a raw buffer (bias-corrected, standard formulation).
void adam_update(double* value, const double* grad, double* m, double* v, size_t n, int64_t t,
                 double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Adam over groups of Params, each group with its own learning rate.
/// β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
class Adam {
public:
    void add_group(const std::vector<Param*>& params, double lr);
    /// Applies one step using gradients recorded in g for each bound param.
    void step(const Graph& g);
    int64_t step_count() const { return t_; }
    void set_group_lr(size_t group, double lr);

private:
    struct Slot {
        Param* p{nullptr};
        std::vector<double> m, v;
        size_t group{0};
    };
    std::vector<Slot> slots_;
    std::vector<double> group_lr_;
    int64_t t_{0};
};

} // namespace brite::ad
