#include "ssd/encoders.hpp"

#include <stdexcept>

namespace ssd {

LstmParams::LstmParams(const std::string& name, int input_dim, int hidden, Rng& rng) {
    if (input_dim < 1 || hidden < 1) throw std::invalid_argument("LSTM dimensions must be positive");
    input_weight = ad::Parameter(name + ".input_weight", glorot_uniform(input_dim, 4 * hidden, rng));
    Matrix rec(hidden, 4 * hidden);
    for (int g = 0; g < 4; ++g) rec.middleCols(g * hidden, hidden) = orthogonal(hidden, rng);
    recurrent_weight = ad::Parameter(name + ".recurrent_weight", std::move(rec));
    Matrix b = Matrix::Zero(1, 4 * hidden);
    b.middleCols(hidden, hidden).setOnes();
    bias = ad::Parameter(name + ".bias", std::move(b));
}

std::vector<ad::Parameter*> BiLstm::parameters() {
    auto p = forward.parameters();
    for (auto* q : backward.parameters()) p.push_back(q);
    return p;
}

AttentionParams::AttentionParams(const std::string& name, int model_dim, int heads_, int head_dim_, Rng& rng)
    : heads(heads_), head_dim(head_dim_) {
    if (heads < 1 || head_dim < 1) throw std::invalid_argument("attention needs heads >= 1 and head_dim >= 1");
    query = ad::Parameter(name + ".query", glorot_uniform(model_dim, heads * head_dim, rng));
    key = ad::Parameter(name + ".key", glorot_uniform(model_dim, heads * head_dim, rng));
    value = ad::Parameter(name + ".value", glorot_uniform(model_dim, heads * head_dim, rng));
    output = ad::Parameter(name + ".output", glorot_uniform(heads * head_dim, model_dim, rng));
}

Encoder::Encoder(const std::string& name, int input_dim, const EncoderConfig& cfg, Rng& rng)
    : lstm(name + ".lstm", input_dim, cfg.hidden, rng),
      attention(name + ".attention", 2 * cfg.hidden, cfg.heads, cfg.head_dim, rng) {}

std::vector<ad::Parameter*> Encoder::parameters() {
    auto p = lstm.parameters();
    for (auto* q : attention.parameters()) p.push_back(q);
    return p;
}

namespace {

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

}  // namespace

ad::Var lstm_direction(const ad::Var& pre_gates, const ad::Var& recurrent_weight, const IntVector& lengths,
                       int max_length, bool reverse) {
    const int batch = static_cast<int>(lengths.size());
    const Eigen::Index d = recurrent_weight.rows();
    if (pre_gates.cols() != 4 * d || recurrent_weight.cols() != 4 * d) {
        throw std::invalid_argument("lstm_direction: gate width must be 4 * hidden");
    }
    if (pre_gates.rows() != static_cast<Eigen::Index>(batch) * max_length) {
        throw std::invalid_argument("lstm_direction: row count differs from batch * max_length");
    }
    const Matrix& P = pre_gates.value();
    const Matrix& Wh = recurrent_weight.value();

    struct Step {
        Matrix i, f, g, o, c, tanh_c, h_prev, c_prev;
        Eigen::ArrayXd mask;
    };
    std::vector<Step> steps(static_cast<std::size_t>(max_length));
    Matrix h = Matrix::Zero(batch, d);
    Matrix c = Matrix::Zero(batch, d);
    Matrix out = Matrix::Zero(P.rows(), d);
    for (int s = 0; s < max_length; ++s) {
        const int t = reverse ? max_length - 1 - s : s;
        Step& st = steps[static_cast<std::size_t>(s)];
        st.mask.resize(batch);
        Matrix gates(batch, 4 * d);
        for (int b = 0; b < batch; ++b) {
            st.mask(b) = t < lengths[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
            gates.row(b) = P.row(b * max_length + t);
        }
        gates.noalias() += h * Wh;
        st.i = sigmoid(gates.middleCols(0, d).array()).matrix();
        st.f = sigmoid(gates.middleCols(d, d).array()).matrix();
        st.g = gates.middleCols(2 * d, d).array().tanh().matrix();
        st.o = sigmoid(gates.middleCols(3 * d, d).array()).matrix();
        st.h_prev = h;
        st.c_prev = c;
        Matrix c_new = st.f.cwiseProduct(c) + st.i.cwiseProduct(st.g);
        st.tanh_c = c_new.array().tanh().matrix();
        Matrix h_new = st.o.cwiseProduct(st.tanh_c);
        for (int b = 0; b < batch; ++b) {
            if (st.mask(b) > 0.0) {
                c.row(b) = c_new.row(b);
                h.row(b) = h_new.row(b);
                out.row(b * max_length + t) = h_new.row(b);
            }
        }
        st.c = c_new;
    }

    ad::Tape& tape = *pre_gates.tape();
    return tape.push(std::move(out), {pre_gates, recurrent_weight},
                     [pre_gates, recurrent_weight, steps = std::move(steps), lengths, max_length, reverse, batch,
                      d](ad::Tape& tp, const Matrix& grad) {
                         const Matrix& Wh = recurrent_weight.value();
                         Matrix* dP = tp.grad_buffer(pre_gates);
                         Matrix dWh = Matrix::Zero(Wh.rows(), Wh.cols());
                         Matrix dh = Matrix::Zero(batch, d);
                         Matrix dc = Matrix::Zero(batch, d);
                         for (int s = max_length - 1; s >= 0; --s) {
                             const int t = reverse ? max_length - 1 - s : s;
                             const Step& st = steps[static_cast<std::size_t>(s)];
                             Matrix dh_total = dh;
                             for (int b = 0; b < batch; ++b) {
                                 if (st.mask(b) > 0.0) dh_total.row(b) += grad.row(b * max_length + t);
                             }
                             const auto o = st.o.array();
                             const auto tc = st.tanh_c.array();
                             Eigen::ArrayXXd dc_total = dc.array() + dh_total.array() * o * (1.0 - tc.square());
                             Matrix dG(batch, 4 * d);
                             dG.middleCols(0, d) =
                                 (dc_total * st.g.array() * st.i.array() * (1.0 - st.i.array())).matrix();
                             dG.middleCols(d, d) =
                                 (dc_total * st.c_prev.array() * st.f.array() * (1.0 - st.f.array())).matrix();
                             dG.middleCols(2 * d, d) = (dc_total * st.i.array() * (1.0 - st.g.array().square())).matrix();
                             dG.middleCols(3 * d, d) = (dh_total.array() * tc * o * (1.0 - o)).matrix();
                             for (int b = 0; b < batch; ++b) {
                                 if (st.mask(b) == 0.0) dG.row(b).setZero();
                             }
                             dWh.noalias() += st.h_prev.transpose() * dG;
                             Matrix dh_prev = dG * Wh.transpose();
                             Matrix dc_prev = (dc_total * st.f.array()).matrix();
                             for (int b = 0; b < batch; ++b) {
                                 if (st.mask(b) > 0.0) {
                                     if (dP != nullptr) dP->row(b * max_length + t) += dG.row(b);
                                     dh.row(b) = dh_prev.row(b);
                                     dc.row(b) = dc_prev.row(b);
                                 }
                                 // masked rows: state passed through unchanged, gradients carry over
                             }
                         }
                         tp.accumulate(recurrent_weight, dWh);
                     });
}

ad::Var bilstm(ad::Tape& tape, const ad::Var& inputs, const IntVector& lengths, int max_length, BiLstm& params,
               bool trainable) {
    auto direction = [&](LstmParams& p, bool reverse) {
        ad::Var pre = ad::affine(inputs, use(tape, p.input_weight, trainable), use(tape, p.bias, trainable));
        return lstm_direction(pre, use(tape, p.recurrent_weight, trainable), lengths, max_length, reverse);
    };
    ad::Var fwd = direction(params.forward, false);
    ad::Var bwd = direction(params.backward, true);
    return ad::concat_cols({fwd, bwd});
}

Matrix attention_scores(const Matrix& projected_queries, const Matrix& projected_keys, int head_dim) {
    return projected_queries * projected_keys.transpose() / std::sqrt(static_cast<double>(head_dim));
}

Matrix masked_softmax(const Matrix& scores, int valid_columns) {
    if (valid_columns < 1) throw std::invalid_argument("masked_softmax: all positions masked");
    Matrix masked = scores;
    for (Eigen::Index c = valid_columns; c < masked.cols(); ++c) masked.col(c).setConstant(kNegInf);
    return ad::softmax_rows(masked);
}

ad::Var attend_heads(const ad::Var& queries, const ad::Var& keys, const ad::Var& values, const IntVector& lengths,
                     int max_length, int heads, int head_dim) {
    const int batch = static_cast<int>(lengths.size());
    const Eigen::Index width = static_cast<Eigen::Index>(heads) * head_dim;
    if (queries.cols() != width || keys.cols() != width || values.cols() != width) {
        throw std::invalid_argument("attend_heads: projection width must be heads * head_dim");
    }
    const Matrix& Q = queries.value();
    const Matrix& K = keys.value();
    const Matrix& V = values.value();
    Matrix out = Matrix::Zero(Q.rows(), width);
    // attention weights per (sentence, head), kept for the backward pass
    std::vector<Matrix> weights(static_cast<std::size_t>(batch * heads));
    for (int b = 0; b < batch; ++b) {
        const int len = lengths[static_cast<std::size_t>(b)];
        if (len < 1) throw std::invalid_argument("attend_heads: all positions masked");
        const int r0 = b * max_length;
        for (int h = 0; h < heads; ++h) {
            const auto qh = Q.block(r0, h * head_dim, len, head_dim);
            const auto kh = K.block(r0, h * head_dim, len, head_dim);
            const auto vh = V.block(r0, h * head_dim, len, head_dim);
            Matrix a = masked_softmax(attention_scores(qh, kh, head_dim), len);
            out.block(r0, h * head_dim, len, head_dim) = a * vh;
            weights[static_cast<std::size_t>(b * heads + h)] = std::move(a);
        }
    }
    ad::Tape& tape = *queries.tape();
    return tape.push(std::move(out), {queries, keys, values},
                     [queries, keys, values, weights = std::move(weights), lengths, max_length, heads, head_dim,
                      batch](ad::Tape& tp, const Matrix& grad) {
                         const Matrix& Q = queries.value();
                         const Matrix& K = keys.value();
                         const Matrix& V = values.value();
                         Matrix* dQ = tp.grad_buffer(queries);
                         Matrix* dK = tp.grad_buffer(keys);
                         Matrix* dV = tp.grad_buffer(values);
                         const double inv = 1.0 / std::sqrt(static_cast<double>(head_dim));
                         for (int b = 0; b < batch; ++b) {
                             const int len = lengths[static_cast<std::size_t>(b)];
                             const int r0 = b * max_length;
                             for (int h = 0; h < heads; ++h) {
                                 const Matrix& a = weights[static_cast<std::size_t>(b * heads + h)];
                                 const auto go = grad.block(r0, h * head_dim, len, head_dim);
                                 const auto qh = Q.block(r0, h * head_dim, len, head_dim);
                                 const auto kh = K.block(r0, h * head_dim, len, head_dim);
                                 const auto vh = V.block(r0, h * head_dim, len, head_dim);
                                 if (dV != nullptr) dV->block(r0, h * head_dim, len, head_dim) += a.transpose() * go;
                                 const Matrix da = go * vh.transpose();
                                 const Eigen::VectorXd row_dot = (da.cwiseProduct(a)).rowwise().sum();
                                 Matrix ds = a.cwiseProduct(da.colwise() - row_dot) * inv;
                                 if (dQ != nullptr) dQ->block(r0, h * head_dim, len, head_dim) += ds * kh;
                                 if (dK != nullptr) dK->block(r0, h * head_dim, len, head_dim) += ds.transpose() * qh;
                             }
                         }
                     });
}

namespace {

Matrix row_mask_matrix(const IntVector& lengths, int max_length, Eigen::Index cols) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(lengths.size()) * max_length, cols);
    for (std::size_t b = 0; b < lengths.size(); ++b) {
        m.middleRows(static_cast<Eigen::Index>(b) * max_length, lengths[b]).setOnes();
    }
    return m;
}

}  // namespace

ad::Var self_attention(ad::Tape& tape, const ad::Var& states, const IntVector& lengths, int max_length,
                       AttentionParams& params, bool trainable) {
    if (states.cols() != params.query.value.rows()) {
        throw std::invalid_argument("self_attention: state width differs from projection input");
    }
    ad::Var q = ad::matmul(states, use(tape, params.query, trainable));
    ad::Var k = ad::matmul(states, use(tape, params.key, trainable));
    ad::Var v = ad::matmul(states, use(tape, params.value, trainable));
    ad::Var heads = attend_heads(q, k, v, lengths, max_length, params.heads, params.head_dim);
    ad::Var projected = ad::matmul(heads, use(tape, params.output, trainable));
    return ad::cmul_const(projected, row_mask_matrix(lengths, max_length, projected.cols()));
}

ad::Var encode(ad::Tape& tape, const ad::Var& embeddings, const IntVector& lengths, int max_length,
               Encoder& encoder, bool trainable) {
    ad::Var h = bilstm(tape, embeddings, lengths, max_length, encoder.lstm, trainable);
    return self_attention(tape, h, lengths, max_length, encoder.attention, trainable);
}

Matrix bilstm_forward(const Matrix& inputs, const BiLstm& params) {
    ad::Tape tape;
    const int len = static_cast<int>(inputs.rows());
    ad::Var x = tape.constant(inputs);
    // frozen reads never modify the parameters
    auto& p = const_cast<BiLstm&>(params);
    return bilstm(tape, x, {len}, len, p, false).value();
}

Matrix self_attention_forward(const Matrix& states, const AttentionParams& params) {
    ad::Tape tape;
    const int len = static_cast<int>(states.rows());
    auto& p = const_cast<AttentionParams&>(params);
    return self_attention(tape, tape.constant(states), {len}, len, p, false).value();
}

Matrix attention_weights(const Matrix& states, const AttentionParams& params, int head) {
    if (head < 0 || head >= params.heads) throw std::out_of_range("attention head index");
    const auto cols = Eigen::seqN(head * params.head_dim, params.head_dim);
    const Matrix q = (states * params.query.value)(Eigen::all, cols);
    const Matrix k = (states * params.key.value)(Eigen::all, cols);
    return masked_softmax(attention_scores(q, k, params.head_dim), static_cast<int>(states.rows()));
}

}  // namespace ssd
