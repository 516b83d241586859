#include "ssd/disentangler.hpp"

#include <algorithm>
#include <stdexcept>

namespace ssd {

std::vector<ad::Parameter*> Decoder::parameters() {
    auto p = hidden.parameters();
    for (auto* q : output.parameters()) p.push_back(q);
    return p;
}

Matrix reconstruct(const Matrix& z, const Matrix& v, const Decoder& decoder) {
    if (z.rows() != v.rows()) throw std::invalid_argument("reconstruct: z and v differ in length");
    if (z.cols() + v.cols() != decoder.hidden.in_dim()) {
        throw std::invalid_argument("reconstruct: latent width differs from decoder input");
    }
    Matrix latent(z.rows(), z.cols() + v.cols());
    latent << z, v;
    Matrix h = decoder.hidden.apply(latent).array().tanh().matrix();
    return decoder.output.apply(h);
}

double reconstruction_loss(const Matrix& reconstruction, const Matrix& original, const std::vector<bool>& mask) {
    if (reconstruction.rows() != original.rows() || reconstruction.cols() != original.cols()) {
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    }
    if (static_cast<Eigen::Index>(mask.size()) != original.rows()) {
        throw std::invalid_argument("reconstruction_loss: mask length");
    }
    double total = 0.0;
    int rows = 0;
    for (Eigen::Index r = 0; r < original.rows(); ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        total += (reconstruction.row(r) - original.row(r)).squaredNorm() / static_cast<double>(original.cols());
        ++rows;
    }
    if (rows == 0) throw std::invalid_argument("reconstruction_loss: empty mask");
    return total / rows;
}

RowVector predict_domain(const Matrix& z, const std::vector<bool>& mask, const DomainPredictor& predictor) {
    if (static_cast<Eigen::Index>(mask.size()) != z.rows()) throw std::invalid_argument("predict_domain: mask length");
    RowVector pooled = RowVector::Constant(z.cols(), kNegInf);
    bool any = false;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        pooled = pooled.cwiseMax(z.row(r));
        any = true;
    }
    if (!any) throw std::invalid_argument("predict_domain: all positions masked");
    return ad::softmax_rows(predictor.layer.apply(pooled)).row(0);
}

double domain_loss(const Matrix& predictions, const IntVector& domains) {
    if (predictions.rows() != static_cast<Eigen::Index>(domains.size()) || domains.empty()) {
        throw std::invalid_argument("domain_loss: one domain label per prediction row");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < domains.size(); ++i) {
        total -= std::log(std::max(predictions(static_cast<Eigen::Index>(i), domains[i]), kLogEps));
    }
    return total / static_cast<double>(domains.size());
}

ad::Var domain_loss(ad::Tape& tape, const ad::Var& z, const std::vector<std::pair<int, int>>& segments,
                    const IntVector& domains, DomainPredictor& predictor, bool trainable) {
    ad::Var pooled = ad::segment_max(z, segments);
    return ad::softmax_cross_entropy(predictor.layer.apply(tape, pooled, trainable), domains);
}

ad::Var MiCritic::score(ad::Tape& tape, const ad::Var& a, const ad::Var& b, bool trainable) {
    ad::Var x = ad::concat_cols({a, b});
    return output.apply(tape, ad::relu(hidden.apply(tape, x, trainable)), trainable);
}

Matrix MiCritic::score(const Matrix& a, const Matrix& b) const {
    if (a.rows() != b.rows()) throw std::invalid_argument("critic: pair count mismatch");
    Matrix x(a.rows(), a.cols() + b.cols());
    x << a, b;
    return output.apply(hidden.apply(x).cwiseMax(0.0));
}

void MiCritic::update_ema(double log_mean_exp) {
    if (!ema_initialized) {
        log_ema = log_mean_exp;
        ema_initialized = true;
        return;
    }
    Eigen::Array2d terms(std::log(ema_decay) + log_ema, std::log1p(-ema_decay) + log_mean_exp);
    log_ema = log_sum_exp(terms);
}

std::vector<ad::Parameter*> MiCritic::parameters() {
    auto p = hidden.parameters();
    for (auto* q : output.parameters()) p.push_back(q);
    return p;
}

std::vector<ad::Parameter*> CriticSet::parameters() {
    std::vector<ad::Parameter*> p;
    for (MiCritic* c : {&e, &z, &v}) {
        for (auto* q : c->parameters()) p.push_back(q);
    }
    return p;
}

IntVector shuffle_marginals(int n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("shuffle_marginals: need at least two samples");
    Rng rng(seed);
    IntVector perm(static_cast<std::size_t>(n));
    for (int attempt = 0; attempt < 16; ++attempt) {
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        rng.shuffle(perm);
        bool fixed = false;
        for (int i = 0; i < n && !fixed; ++i) fixed = perm[static_cast<std::size_t>(i)] == i;
        if (!fixed) break;
    }
    return perm;
}

PairBatch shuffle_marginals(const PairBatch& joint, std::uint64_t seed) {
    if (joint.a.rows() != joint.b.rows()) throw std::invalid_argument("shuffle_marginals: pair count mismatch");
    const IntVector perm = shuffle_marginals(static_cast<int>(joint.a.rows()), seed);
    PairBatch out{joint.a, Matrix(joint.b.rows(), joint.b.cols())};
    for (std::size_t i = 0; i < perm.size(); ++i) out.b.row(static_cast<Eigen::Index>(i)) = joint.b.row(perm[i]);
    return out;
}

MiEstimate mi_lower_bound_from_scores(const Matrix& joint_scores, const Matrix& marginal_scores) {
    if (joint_scores.size() == 0 || marginal_scores.size() == 0) {
        throw std::invalid_argument("mi_lower_bound: empty batch");
    }
    MiEstimate est;
    est.joint_mean = joint_scores.mean();
    const Eigen::ArrayXd m = marginal_scores.reshaped().array();
    est.log_marginal_mean = log_sum_exp(m) - std::log(static_cast<double>(m.size()));
    est.value = est.joint_mean - est.log_marginal_mean;
    return est;
}

MiEstimate mi_lower_bound(const CriticFn& critic, const PairBatch& joint, const PairBatch& marginal) {
    return mi_lower_bound_from_scores(critic(joint.a, joint.b), critic(marginal.a, marginal.b));
}

MiEstimate mi_lower_bound(const MiCritic& critic, const PairBatch& joint, const PairBatch& marginal) {
    return mi_lower_bound_from_scores(critic.score(joint.a, joint.b), critic.score(marginal.a, marginal.b));
}

ad::Var dv_bound(const ad::Var& joint_scores, const ad::Var& marginal_scores, const double* log_denominator) {
    const MiEstimate est = mi_lower_bound_from_scores(joint_scores.value(), marginal_scores.value());
    const double nj = static_cast<double>(joint_scores.value().size());
    const Matrix& tm = marginal_scores.value();
    const double nm = static_cast<double>(tm.size());
    const double log_norm = log_denominator != nullptr ? *log_denominator + std::log(nm) : est.log_marginal_mean + std::log(nm);
    const Matrix weights = (tm.array() - log_norm).exp().matrix();
    Matrix out(1, 1);
    out(0, 0) = est.value;
    ad::Tape& tape = *joint_scores.tape();
    return tape.push(std::move(out), {joint_scores, marginal_scores},
                     [joint_scores, marginal_scores, weights, nj](ad::Tape& tp, const Matrix& g) {
                         tp.accumulate(joint_scores, Matrix::Constant(joint_scores.rows(), joint_scores.cols(), g(0, 0) / nj));
                         tp.accumulate(marginal_scores, -weights * g(0, 0));
                     });
}

namespace {

struct Bound {
    ad::Var value;
    MiEstimate estimate;
};

/// Bound of one critic on a pair batch; joint and shuffled pairs share the tape.
Bound critic_bound(ad::Tape& tape, MiCritic& critic, const ad::Var& a, const ad::Var& b, const IntVector& perm,
                   bool trainable, bool use_ema) {
    ad::Var joint = critic.score(tape, a, b, trainable);
    ad::Var marginal = critic.score(tape, a, ad::select_rows(b, perm), trainable);
    Bound out;
    out.estimate = mi_lower_bound_from_scores(joint.value(), marginal.value());
    if (use_ema) {
        critic.update_ema(out.estimate.log_marginal_mean);
        out.value = dv_bound(joint, marginal, &critic.log_ema);
    } else {
        out.value = dv_bound(joint, marginal);
    }
    return out;
}

}  // namespace

CriticStepResult critic_step(CriticSet& critics, const LatentSamples& samples, Adam& optimizer, std::uint64_t seed) {
    const auto n = samples.z.rows();
    if (n < 2 || samples.v.rows() != n || samples.w.rows() != n) {
        throw std::invalid_argument("critic_step: need at least two aligned samples");
    }
    ad::Tape tape;
    ad::Var z = tape.constant(samples.z);
    ad::Var v = tape.constant(samples.v);
    ad::Var w = tape.constant(samples.w);
    const IntVector perm_e = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 0));
    const IntVector perm_z = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 1));
    const IntVector perm_v = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 2));
    const Bound le = critic_bound(tape, critics.e, z, v, perm_e, true, true);
    const Bound lz = critic_bound(tape, critics.z, w, z, perm_z, true, true);
    const Bound lv = critic_bound(tape, critics.v, w, v, perm_v, true, true);
    // every critic ascends its own bound; parameters are disjoint
    ad::Var objective = ad::weighted_sum({{le.value, -1.0}, {lz.value, -1.0}, {lv.value, -1.0}});
    auto params = critics.parameters();
    zero_grads(params);
    tape.backward(objective);
    optimizer.step(params);
    return {le.estimate, lz.estimate, lv.estimate};
}

CriticStepResult train_critics(CriticSet& critics, const std::function<LatentSamples()>& stream, int steps,
                               Adam& optimizer, std::uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("train_critics: step count must be >= 1");
    CriticStepResult last;
    for (int s = 0; s < steps; ++s) {
        last = critic_step(critics, stream(), optimizer, Rng::derive(seed, static_cast<std::uint64_t>(s)));
    }
    return last;
}

RegularizerTerms encoder_mi_regularizer(ad::Tape& tape, CriticSet& critics, const ad::Var& z, const ad::Var& v,
                                        const ad::Var& w, std::uint64_t seed) {
    const auto n = z.rows();
    if (n < 2 || v.rows() != n || w.rows() != n) {
        throw std::invalid_argument("encoder_mi_regularizer: need at least two aligned samples");
    }
    const IntVector perm_e = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 0));
    const IntVector perm_z = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 1));
    const IntVector perm_v = shuffle_marginals(static_cast<int>(n), Rng::derive(seed, 2));
    const Bound ie = critic_bound(tape, critics.e, z, v, perm_e, false, false);
    const Bound iz = critic_bound(tape, critics.z, w, z, perm_z, false, false);
    const Bound iv = critic_bound(tape, critics.v, w, v, perm_v, false, false);
    RegularizerTerms out;
    out.value = ad::weighted_sum({{ie.value, 1.0}, {iz.value, -1.0}, {iv.value, -1.0}});
    out.zv = ie.value;
    out.wz = iz.value;
    out.wv = iv.value;
    out.mi_zv = ie.estimate.value;
    out.mi_wz = iz.estimate.value;
    out.mi_wv = iv.estimate.value;
    return out;
}

}  // namespace ssd
