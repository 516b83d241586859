#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every value produced during one forward pass together with a
// closure that pushes the output gradient back to the inputs. Parameters are
// long-lived objects owned by the model; a tape only borrows them and adds its
// gradients into Parameter::grad when backward() runs.

#include "ssd/tensor.hpp"

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace ssd::ad {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using BackFn = std::function<void(Tape&, const Matrix& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var param(Parameter& p);
    /// A parameter read without gradient tracking (frozen for this pass).
    Var frozen(const Parameter& p) { return constant(p.value); }

    /// Records a derived node. `back` is only invoked when some input needs a gradient.
    Var push(Matrix value, std::initializer_list<Var> inputs, BackFn back);
    Var push(Matrix value, const std::vector<Var>& inputs, BackFn back);

    const Matrix& value(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
    bool needs_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].needs_grad; }

    /// Adds `g` into the gradient of `v` if `v` participates in differentiation.
    template <typename Expr>
    void accumulate(const Var& v, const Expr& g) {
        Node& n = nodes_[static_cast<std::size_t>(v.id())];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }
    /// Mutable gradient buffer for scattered updates; allocated on first use.
    Matrix* grad_buffer(const Var& v);

    /// Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates to parameters.
    void backward(const Var& root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Parameter* param = nullptr;
        BackFn back;
    };
    std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Elementwise and linear algebra
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& a, const Var& bias);
/// Affine map x W + b with b broadcast over rows.
inline Var affine(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Elementwise product with a constant matrix (dropout masks, row masks).
Var cmul_const(const Var& a, const Matrix& m);
/// Gradient stops here; the value is copied into a fresh constant.
Var detach(const Var& a);

// Shape manipulation
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n);
/// Gathers rows by index; index -1 yields a zero row.
Var select_rows(const Var& a, const IntVector& rows);
/// Embedding lookup: ids equal to `zero_id` yield zero rows and receive no gradient.
Var lookup(const Var& table, const IntVector& ids, int zero_id);

// Reductions
Var sum(const Var& a);
Var mean(const Var& a);
/// Coordinate-wise max over row segments [start, start+len); one output row per segment.
/// Ties route the gradient to the lowest row.
Var segment_max(const Var& a, const std::vector<std::pair<int, int>>& segments);
/// Weighted sum of 1x1 values.
Var weighted_sum(const std::vector<std::pair<Var, double>>& terms);

// Losses
/// Mean over masked rows of the per-row mean squared error against a constant target.
Var masked_mse(const Var& prediction, const Matrix& target, const std::vector<bool>& row_mask);
/// Mean softmax cross-entropy; probabilities clamped at kLogEps inside the log.
Var softmax_cross_entropy(const Var& logits, const IntVector& labels);

Matrix softmax_rows(const Matrix& logits);

}  // namespace ssd::ad
