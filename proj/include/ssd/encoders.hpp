#pragma once

// BiLSTM and multi-head self-attention sequence encoders.
//
// Batched sequences use the row layout of ssd::Batch: position (b, i) is row
// b * max_length + i. Rows past a sentence's length are zero on output.

#include "ssd/autodiff.hpp"
#include "ssd/layers.hpp"

#include <string>
#include <vector>

namespace ssd {

struct EncoderConfig {
    int hidden = 100;    ///< per direction
    int heads = 4;
    int head_dim = 50;
};

/// One LSTM direction; gate blocks ordered input, forget, cell, output.
struct LstmParams {
    ad::Parameter input_weight;      ///< d_in x 4d
    ad::Parameter recurrent_weight;  ///< d x 4d, each d x d block orthogonal
    ad::Parameter bias;              ///< 1 x 4d, forget block 1.0

    LstmParams() = default;
    LstmParams(const std::string& name, int input_dim, int hidden, Rng& rng);
    int hidden() const { return static_cast<int>(recurrent_weight.value.rows()); }
    std::vector<ad::Parameter*> parameters() { return {&input_weight, &recurrent_weight, &bias}; }
};

struct BiLstm {
    LstmParams forward;
    LstmParams backward;

    BiLstm() = default;
    BiLstm(const std::string& name, int input_dim, int hidden, Rng& rng)
        : forward(name + ".fwd", input_dim, hidden, rng), backward(name + ".bwd", input_dim, hidden, rng) {}
    int output_dim() const { return 2 * forward.hidden(); }
    std::vector<ad::Parameter*> parameters();
};

/// Per-head projections stored side by side: head t owns columns [t*u, (t+1)*u).
struct AttentionParams {
    int heads = 1;
    int head_dim = 1;
    ad::Parameter query;   ///< 2d x heads*u
    ad::Parameter key;     ///< 2d x heads*u
    ad::Parameter value;   ///< 2d x heads*u
    ad::Parameter output;  ///< heads*u x 2d

    AttentionParams() = default;
    AttentionParams(const std::string& name, int model_dim, int heads, int head_dim, Rng& rng);
    std::vector<ad::Parameter*> parameters() { return {&query, &key, &value, &output}; }
};

/// BiLSTM followed by self-attention; used once per latent (G_z, G_v).
struct Encoder {
    BiLstm lstm;
    AttentionParams attention;

    Encoder() = default;
    Encoder(const std::string& name, int input_dim, const EncoderConfig& cfg, Rng& rng);
    int output_dim() const { return lstm.output_dim(); }
    std::vector<ad::Parameter*> parameters();
};

/// One direction over a padded batch. `pre_gates` = x W_x + b for every row.
/// Masked steps carry the state through and emit zero.
ad::Var lstm_direction(const ad::Var& pre_gates, const ad::Var& recurrent_weight, const IntVector& lengths,
                       int max_length, bool reverse);

ad::Var bilstm(ad::Tape& tape, const ad::Var& inputs, const IntVector& lengths, int max_length, BiLstm& params,
               bool trainable);

/// Scaled dot-product attention of every head over the real positions of
/// each sentence; returns the concatenated heads (padded rows zero).
ad::Var attend_heads(const ad::Var& queries, const ad::Var& keys, const ad::Var& values, const IntVector& lengths,
                     int max_length, int heads, int head_dim);

ad::Var self_attention(ad::Tape& tape, const ad::Var& states, const IntVector& lengths, int max_length,
                       AttentionParams& params, bool trainable);

ad::Var encode(ad::Tape& tape, const ad::Var& embeddings, const IntVector& lengths, int max_length,
               Encoder& encoder, bool trainable);

// Single-sentence helpers over plain matrices.

/// (q W^Q_t)(k W^K_t)^T / sqrt(u) for already projected inputs.
Matrix attention_scores(const Matrix& projected_queries, const Matrix& projected_keys, int head_dim);
/// Row softmax with columns >= valid_columns excluded by an additive -inf.
Matrix masked_softmax(const Matrix& scores, int valid_columns);

Matrix bilstm_forward(const Matrix& inputs, const BiLstm& params);
Matrix self_attention_forward(const Matrix& states, const AttentionParams& params);
/// Attention weights of one head (rows are probability vectors).
Matrix attention_weights(const Matrix& states, const AttentionParams& params, int head);

}  // namespace ssd
