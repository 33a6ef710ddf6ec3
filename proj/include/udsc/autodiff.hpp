#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// A Tape records every operation applied during a forward pass. Calling
// backward() on a 1x1 result propagates gradients to every recorded node and
// accumulates them into the Parameters that were bound as leaves. Tapes are
// single-use and single-threaded; parameters outlive tapes.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace udsc::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    // AdamW moments and per-parameter step count.
    Matrix moment1;
    Matrix moment2;
    long steps = 0;
    bool decay = true;
    // Set whenever the parameter is bound into a recording tape; cleared by
    // zero_grad. Untouched parameters are skipped by the optimizer.
    bool touched = false;

    Eigen::Index size() const { return value.size(); }
    void zero_grad();
};

class Tape;

// Lightweight handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
    bool valid() const { return tape != nullptr; }
};

class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(Matrix value);
    Var param(Parameter& p);

    // Seeds d(out)/d(out) = 1 and runs the recorded closures in reverse.
    void backward(Var out);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    // Receives the gradient and value of the node being back-propagated.
    using Backward = std::function<void(Tape&, const Matrix& grad, const Matrix& value)>;
    Var push(Matrix value, std::span<const Var> inputs, Backward backward);
    Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
        return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                    std::move(backward));
    }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    // Adds g into the gradient buffer of v (no-op for constants).
    void accumulate(Var v, const Matrix& g);
    Matrix& grad_buffer(Var v);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        Parameter* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool record_;
};

// ---- elementwise and linear algebra ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);               // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_constant(Var a, const Matrix& c);  // a + c, c not differentiated
Var matmul(Var a, Var b);
Var linear(Var x, Var w, Var b);     // x W + 1 b, b is 1 x cols(W)
Var relu(Var a);
Var sigmoid(Var a);
Var square(Var a);

// ---- reductions ----
Var sum(Var a);                      // 1x1
Var mean(Var a);                     // 1x1
Var sum_scalars(std::span<const Var> xs);

// ---- shape ----
Var concat_rows(std::span<const Var> parts);
// Output row i is input row index[i]; repeated indices accumulate in backward.
Var gather_rows(Var a, std::span<const int> index);
// a + tile(p): p has r rows, a has n*r rows.
Var add_tiled(Var a, Var p);

// ---- normalisation ----
// Row-wise layer norm. gamma/beta may be invalid Vars for the affine-free form.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var l2_normalize_rows(Var x, double eps = 1e-12);
// Each block of `rows_per_block` rows is one transmission whose real entries
// pair up as complex symbols; each block is scaled to unit mean symbol power.
// All-zero blocks pass through unchanged.
Var power_normalize_blocks(Var x, int rows_per_block);

// ---- attention ----
// Scaled dot-product attention over `heads` column groups. Q holds `blocks`
// consecutive groups of q_len rows, K/V hold `blocks` groups of kv_len rows;
// each query block only attends to its own key block.
Var multi_head_attention(Var q, Var k, Var v, int heads, int blocks);

// ---- losses (1x1 outputs) ----
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);
Var mse(Var x, const Matrix& target);
// Mean over rows of max(|a-p|^2 - |a-n|^2 + margin, 0).
Var triplet(Var a, Var p, Var n, double margin);
// Similarity of two feature matrices whose rows are feature vectors of equal
// width: ||E1 E2^T||_F. Zero (with zero subgradient) when either has no rows.
Var frobenius_of_product(Var e1, Var e2);

} // namespace udsc::ad
