#pragma once

// Latent disentanglement machinery: the reconstruction decoder, the domain
// predictor over z, Donsker-Varadhan mutual-information critics, and the
// regularizer that routes the critics' estimates into the encoders.

#include "ssd/autodiff.hpp"
#include "ssd/layers.hpp"
#include "ssd/optimizer.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ssd {

/// Two affine layers with tanh between, applied to z_i ⊕ v_i at every position.
struct Decoder {
    Affine hidden;
    Affine output;

    Decoder() = default;
    Decoder(const std::string& name, int latent_dim, int hidden_dim, int embedding_dim, Rng& rng)
        : hidden(name + ".hidden", latent_dim, hidden_dim, rng), output(name + ".output", hidden_dim, embedding_dim, rng) {}

    ad::Var apply(ad::Tape& tape, const ad::Var& latent, bool trainable) {
        return output.apply(tape, ad::tanh(hidden.apply(tape, latent, trainable)), trainable);
    }
    std::vector<ad::Parameter*> parameters();
};

/// Reconstruction of every position from (z_i, v_i).
Matrix reconstruct(const Matrix& z, const Matrix& v, const Decoder& decoder);

/// Mean over unmasked rows of the per-row mean squared coordinate error.
double reconstruction_loss(const Matrix& reconstruction, const Matrix& original, const std::vector<bool>& mask);

/// Affine map from the max-pooled z sequence to two domain logits.
struct DomainPredictor {
    Affine layer;

    DomainPredictor() = default;
    DomainPredictor(const std::string& name, int latent_dim, Rng& rng) : layer(name, latent_dim, 2, rng) {}
    std::vector<ad::Parameter*> parameters() { return layer.parameters(); }
};

/// Source/target probabilities for one sentence's z rows (mask selects real rows).
RowVector predict_domain(const Matrix& z, const std::vector<bool>& mask, const DomainPredictor& predictor);

/// Mean of -log p[domain] over rows of a probability matrix (p clamped at 1e-12).
double domain_loss(const Matrix& predictions, const IntVector& domains);

/// Batched domain loss: max-pool z per segment, affine, softmax cross-entropy.
ad::Var domain_loss(ad::Tape& tape, const ad::Var& z, const std::vector<std::pair<int, int>>& segments,
                    const IntVector& domains, DomainPredictor& predictor, bool trainable);

/// Samples of a variable pair; row i of `a` is paired with row i of `b`.
struct PairBatch {
    Matrix a;
    Matrix b;
};

struct MiEstimate {
    double value = 0.0;
    double joint_mean = 0.0;
    double log_marginal_mean = 0.0;
};

/// Scalar critic T(a, b) = relu([a, b] W1 + b1) W2 + b2.
///
/// Besides its weights the critic carries a running average of
/// mean(exp T) over product-of-marginals samples, stored in log space. Critic
/// training divides by that average instead of the batch mean, which removes
/// most of the bias of the plain minibatch gradient.
struct MiCritic {
    Affine hidden;
    Affine output;
    double ema_decay = 0.99;
    double log_ema = 0.0;
    bool ema_initialized = false;

    MiCritic() = default;
    MiCritic(const std::string& name, int a_dim, int b_dim, int hidden_dim, Rng& rng, double decay = 0.99)
        : hidden(name + ".hidden", a_dim + b_dim, hidden_dim, rng), output(name + ".output", hidden_dim, 1, rng),
          ema_decay(decay) {}

    ad::Var score(ad::Tape& tape, const ad::Var& a, const ad::Var& b, bool trainable);
    Matrix score(const Matrix& a, const Matrix& b) const;
    /// Folds a batch statistic log(mean exp T) into the running average.
    void update_ema(double log_mean_exp);
    std::vector<ad::Parameter*> parameters();
};

/// The three critics over (z, v), (w, z) and (w, v).
struct CriticSet {
    MiCritic e;
    MiCritic z;
    MiCritic v;

    std::vector<ad::Parameter*> parameters();
};

/// Permutation for product-of-marginals pairing. Draws uniform permutations
/// until one has no fixed point (at most 16 tries, then keeps the last).
IntVector shuffle_marginals(int n, std::uint64_t seed);
/// Pairs a_i with b_pi(i).
PairBatch shuffle_marginals(const PairBatch& joint, std::uint64_t seed);

/// mean(T over joint) - log(mean(exp T over marginal)), log-sum-exp stabilized.
MiEstimate mi_lower_bound_from_scores(const Matrix& joint_scores, const Matrix& marginal_scores);

using CriticFn = std::function<Matrix(const Matrix& a, const Matrix& b)>;
MiEstimate mi_lower_bound(const CriticFn& critic, const PairBatch& joint, const PairBatch& marginal);
MiEstimate mi_lower_bound(const MiCritic& critic, const PairBatch& joint, const PairBatch& marginal);

/// Differentiable bound. When `log_denominator` is given, the marginal-term
/// gradient uses exp(T_j) / (n * exp(log_denominator)) in place of the batch
/// softmax weights; the returned value always uses the batch statistic.
ad::Var dv_bound(const ad::Var& joint_scores, const ad::Var& marginal_scores, const double* log_denominator = nullptr);

/// Per-token latent samples drawn from one forward pass with frozen encoders.
/// `w` is the embedding paired with z and v (original or reconstructed).
struct LatentSamples {
    Matrix z;
    Matrix v;
    Matrix w;
};

struct CriticStepResult {
    MiEstimate e;
    MiEstimate z;
    MiEstimate v;
};

/// One ascent step on each critic's bound; only critic parameters change.
CriticStepResult critic_step(CriticSet& critics, const LatentSamples& samples, Adam& optimizer, std::uint64_t seed);

/// Runs `steps` critic steps on samples drawn from `stream`.
/// Throws std::invalid_argument when steps < 1.
CriticStepResult train_critics(CriticSet& critics, const std::function<LatentSamples()>& stream, int steps,
                               Adam& optimizer, std::uint64_t seed);

/// I(z; v) - I(w; z) - I(w; v) estimated with frozen critics. Gradients reach
/// z, v and w (and whatever produced them) but never the critics.
struct RegularizerTerms {
    ad::Var value;
    ad::Var zv;  ///< the three bounds as graph nodes
    ad::Var wz;
    ad::Var wv;
    double mi_zv = 0.0;
    double mi_wz = 0.0;
    double mi_wv = 0.0;
};
RegularizerTerms encoder_mi_regularizer(ad::Tape& tape, CriticSet& critics, const ad::Var& z, const ad::Var& v,
                                        const ad::Var& w, std::uint64_t seed);

}  // namespace ssd
