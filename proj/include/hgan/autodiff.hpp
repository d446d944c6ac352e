#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "hgan/tensor.hpp"

namespace hgan::ad {

enum class Mode { Train, Eval };

/// Distances from non-smooth points seen during a forward pass. The gradient
/// checker inspects these to reject instances sitting on a kink, where central
/// differences are meaningless.
struct KinkStats {
    double min_abs_relu = std::numeric_limits<double>::infinity();
    double min_hinge_gap = std::numeric_limits<double>::infinity();
    double min_argmax_gap = std::numeric_limits<double>::infinity();
    double min_sort_gap = std::numeric_limits<double>::infinity();

    double min_gap() const;
};

// thread_local collector; pass nullptr to disable
void set_kink_stats(KinkStats* sink);

class Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the computation graph: forward result plus accumulating
/// adjoint. `backprop` scatters this node's adjoint into its parents.
class Node {
public:
    explicit Node(Tensor v) : value(std::move(v)), adjoint(Tensor::zeros_like(value)) {}

    Tensor value;
    Tensor adjoint;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;
};

/// Cheap handle to a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var leaf(Tensor v) { return Var(std::make_shared<Node>(std::move(v))); }
    static Var constant(Tensor v) { return leaf(std::move(v)); }

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->adjoint; }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var one_minus(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh_op(Var a);

// linear algebra
Var matmul(Var a, Var b);     // (N,K)x(K,M)
Var matmul_nt(Var a, Var b);  // (N,K)x(M,K): a.b^T
Var matvec(Var w, Var x);     // (R,C)x(C) -> (R)
Var affine(Var x, Var w, Var b);  // x.W^T + b, W is (Dout,Din)

// reductions and shape
Var sum_all(Var a);
Var mean_rows(Var a);  // (N,D) -> (D)
Var dot(Var u, Var v);
Var reshape(Var a, std::vector<std::size_t> shape);
Var row(Var a, std::size_t i);
Var gather_rows(Var a, std::vector<std::size_t> indices);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var concat_vecs(const std::vector<Var>& parts);
Var stack_rows(const std::vector<Var>& rows);
Var stack_scalars(const std::vector<Var>& scalars, std::vector<std::size_t> shape);

// normalization
Var softmax_rows(Var a);  // rank-2, per row, max-shifted
Var softmax_vec(Var a);   // rank-1, whole vector

/// Batch-normalization state for one aggregation layer. gamma/beta are the
/// learned scale/shift (bound as graph leaves by callers); running stats feed
/// eval mode and are updated with `momentum` in train mode.
struct BatchNormState {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    static BatchNormState init(std::size_t channels, double momentum = 0.1,
                               double epsilon = 1e-5);
};

/// Train mode normalizes each channel over the row (node) axis with batch
/// statistics; eval mode uses the running stats. gamma/beta applied after.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode,
               bool update_running);

// similarity / loss pieces
Var cosine(Var u, Var v);  // errors on zero-norm input

/// Per channel: sort the N values descending (ties by lower row index) and
/// take the theta-weighted sum of the order statistics.
Var sort_pool(Var nodes, Var theta);

/// Bidirectional hardest-negative hinge loss over a square similarity matrix
/// whose diagonal holds the matched pairs. Sum over the batch; `mean_reduce`
/// divides by the batch size.
Var triplet_loss(Var sim, double margin, bool mean_reduce = false);

/// Standard GRU cell parameters (update z, reset r, candidate h).
struct GruCellVars {
    Var W_z, U_z, b_z;
    Var W_r, U_r, b_r;
    Var W_h, U_h, b_h;
};

/// h' = (1-z) . h + z . tanh(W_h x + U_h (r.h) + b_h), built from primitives.
Var gru_cell(Var x, Var h_prev, const GruCellVars& p);

/// Reverse-mode sweep from a scalar root; every reachable node's backprop runs
/// exactly once, in reverse topological order. Returns the root value.
double backward(const Var& root);

} // namespace hgan::ad
