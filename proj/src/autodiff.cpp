#include "ssd/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace ssd::ad {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackFn back) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || needs_grad(v);
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, BackFn back) {
    bool needs = false;
    for (const Var& v : inputs) needs = needs || needs_grad(v);
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix* Tape::grad_buffer(const Var& v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.needs_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return &n.grad;
}

void Tape::backward(const Var& root) {
    require(root.tape() == this, "backward: root belongs to another tape");
    require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
    Node& r = nodes_[static_cast<std::size_t>(root.id())];
    if (!r.needs_grad) return;
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) continue;
        if (n.back) {
            // copy: the closure may grow gradients of earlier nodes only
            n.back(*this, n.grad);
        }
        if (n.param != nullptr) n.param->grad += n.grad;
    }
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Tape& t = *a.tape();
    return t.push(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) tp.accumulate(a, g * b.value().transpose());
        if (tp.needs_grad(b)) tp.accumulate(b, a.value().transpose() * g);
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Tape& t = *a.tape();
    return t.push(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Tape& t = *a.tape();
    return t.push(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, -g);
    });
}

Var cmul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul: shape mismatch");
    Tape& t = *a.tape();
    return t.push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
        if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var scale(const Var& a, double s) {
    Tape& t = *a.tape();
    return t.push(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var add_bias(const Var& a, const Var& bias) {
    require(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias: bias must be 1 x cols");
    Tape& t = *a.tape();
    Matrix out = a.value();
    out.rowwise() += bias.value().row(0);
    return t.push(std::move(out), {a, bias}, [a, bias](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
    });
}

Var tanh(const Var& a) {
    Tape& t = *a.tape();
    Matrix out = a.value().array().tanh().matrix();
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), {a}, [a, out_id, &t](Tape& tp, const Matrix& g) {
        const Matrix& y = t.value(Var(&t, out_id));
        tp.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
    });
}

Var sigmoid(const Var& a) {
    Tape& t = *a.tape();
    Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), {a}, [a, out_id, &t](Tape& tp, const Matrix& g) {
        const Matrix& y = t.value(Var(&t, out_id));
        tp.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var relu(const Var& a) {
    Tape& t = *a.tape();
    return t.push(a.value().cwiseMax(0.0), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, (a.value().array() > 0.0).select(g.array(), 0.0).matrix());
    });
}

Var cmul_const(const Var& a, const Matrix& m) {
    require(a.rows() == m.rows() && a.cols() == m.cols(), "cmul_const: shape mismatch");
    Tape& t = *a.tape();
    return t.push(a.value().cwiseProduct(m), {a}, [a, m](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct(m));
    });
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    Tape& t = *parts.front().tape();
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return t.push(std::move(out), parts, [parts](Tape& tp, const Matrix& g) {
        Eigen::Index o = 0;
        for (const Var& p : parts) {
            if (tp.needs_grad(p)) tp.accumulate(p, g.middleCols(o, p.cols()));
            o += p.cols();
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no parts");
    Tape& t = *parts.front().tape();
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    for (const Var& p : parts) {
        require(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return t.push(std::move(out), parts, [parts](Tape& tp, const Matrix& g) {
        Eigen::Index o = 0;
        for (const Var& p : parts) {
            if (tp.needs_grad(p)) tp.accumulate(p, g.middleRows(o, p.rows()));
            o += p.rows();
        }
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols: out of range");
    Tape& t = *a.tape();
    return t.push(a.value().middleCols(start, n), {a}, [a, start, n](Tape& tp, const Matrix& g) {
        if (Matrix* buf = tp.grad_buffer(a)) buf->middleCols(start, n) += g;
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows: out of range");
    Tape& t = *a.tape();
    return t.push(a.value().middleRows(start, n), {a}, [a, start, n](Tape& tp, const Matrix& g) {
        if (Matrix* buf = tp.grad_buffer(a)) buf->middleRows(start, n) += g;
    });
}

Var select_rows(const Var& a, const IntVector& rows) {
    Tape& t = *a.tape();
    const Matrix& src = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        if (r < 0) {
            out.row(static_cast<Eigen::Index>(i)).setZero();
        } else {
            require(r < src.rows(), "select_rows: index out of range");
            out.row(static_cast<Eigen::Index>(i)) = src.row(r);
        }
    }
    return t.push(std::move(out), {a}, [a, rows](Tape& tp, const Matrix& g) {
        Matrix* buf = tp.grad_buffer(a);
        if (buf == nullptr) return;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= 0) buf->row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        }
    });
}

Var lookup(const Var& table, const IntVector& ids, int zero_id) {
    IntVector rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("lookup: id out of range");
        rows[i] = ids[i] == zero_id ? -1 : ids[i];
    }
    return select_rows(table, rows);
}

Var sum(const Var& a) {
    Tape& t = *a.tape();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.push(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) {
    require(a.value().size() > 0, "mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var segment_max(const Var& a, const std::vector<std::pair<int, int>>& segments) {
    Tape& t = *a.tape();
    const Matrix& x = a.value();
    const Eigen::Index cols = x.cols();
    Matrix out(static_cast<Eigen::Index>(segments.size()), cols);
    std::vector<int> argmax(segments.size() * static_cast<std::size_t>(cols));
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto [start, len] = segments[s];
        require(len >= 1 && start >= 0 && start + len <= x.rows(), "segment_max: bad segment");
        for (Eigen::Index c = 0; c < cols; ++c) {
            int best = start;
            for (int r = start + 1; r < start + len; ++r) {
                if (x(r, c) > x(best, c)) best = r;
            }
            out(static_cast<Eigen::Index>(s), c) = x(best, c);
            argmax[s * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)] = best;
        }
    }
    return t.push(std::move(out), {a}, [a, argmax, cols](Tape& tp, const Matrix& g) {
        Matrix* buf = tp.grad_buffer(a);
        if (buf == nullptr) return;
        for (Eigen::Index s = 0; s < g.rows(); ++s) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                (*buf)(argmax[static_cast<std::size_t>(s * cols + c)], c) += g(s, c);
            }
        }
    });
}

Var weighted_sum(const std::vector<std::pair<Var, double>>& terms) {
    require(!terms.empty(), "weighted_sum: no terms");
    Tape& t = *terms.front().first.tape();
    Matrix out = Matrix::Zero(1, 1);
    std::vector<Var> inputs;
    for (const auto& [v, w] : terms) {
        require(v.rows() == 1 && v.cols() == 1, "weighted_sum: terms must be scalars");
        out(0, 0) += w * v.scalar();
        inputs.push_back(v);
    }
    return t.push(std::move(out), inputs, [terms](Tape& tp, const Matrix& g) {
        for (const auto& [v, w] : terms) tp.accumulate(v, g * w);
    });
}

Var masked_mse(const Var& prediction, const Matrix& target, const std::vector<bool>& row_mask) {
    require(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
            "masked_mse: shape mismatch");
    require(static_cast<Eigen::Index>(row_mask.size()) == target.rows(), "masked_mse: mask size");
    const auto active = std::count(row_mask.begin(), row_mask.end(), true);
    require(active > 0, "masked_mse: empty mask");
    Tape& t = *prediction.tape();
    const Matrix diff = prediction.value() - target;
    const double denom = static_cast<double>(active) * static_cast<double>(target.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < diff.rows(); ++r) {
        if (row_mask[static_cast<std::size_t>(r)]) total += diff.row(r).squaredNorm();
    }
    Matrix out(1, 1);
    out(0, 0) = total / denom;
    return t.push(std::move(out), {prediction}, [prediction, diff, row_mask, denom](Tape& tp, const Matrix& g) {
        Matrix d = Matrix::Zero(diff.rows(), diff.cols());
        for (Eigen::Index r = 0; r < diff.rows(); ++r) {
            if (row_mask[static_cast<std::size_t>(r)]) d.row(r) = diff.row(r) * (2.0 * g(0, 0) / denom);
        }
        tp.accumulate(prediction, d);
    });
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        p.row(r) = (logits.row(r).array() - m).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

Var softmax_cross_entropy(const Var& logits, const IntVector& labels) {
    require(static_cast<Eigen::Index>(labels.size()) == logits.rows() && !labels.empty(),
            "softmax_cross_entropy: label count");
    Tape& t = *logits.tape();
    const Matrix p = softmax_rows(logits.value());
    const double n = static_cast<double>(labels.size());
    Matrix out = Matrix::Zero(1, 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && labels[i] < p.cols(), "softmax_cross_entropy: bad label");
        out(0, 0) -= std::log(std::max(p(static_cast<Eigen::Index>(i), labels[i]), kLogEps)) / n;
    }
    return t.push(std::move(out), {logits}, [logits, p, labels, n](Tape& tp, const Matrix& g) {
        Matrix d = p;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            // clamped rows have no gradient through the log
            if (p(r, labels[i]) < kLogEps) {
                d.row(r).setZero();
            } else {
                d(r, labels[i]) -= 1.0;
            }
        }
        tp.accumulate(logits, d * (g(0, 0) / n));
    });
}

}  // namespace ssd::ad
