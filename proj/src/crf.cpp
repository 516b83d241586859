#include "ssd/crf.hpp"

#include <stdexcept>

namespace ssd {

Matrix initial_transitions(int num_tags) {
    Matrix t = Matrix::Zero(num_tags + 2, num_tags + 2);
    t.col(num_tags).setConstant(kNegInf);      // into START
    t.row(num_tags + 1).setConstant(kNegInf);  // out of STOP
    return t;
}

CrfHead::CrfHead(const std::string& name, int rep_dim, int num_tags, Rng& rng)
    : emission(name + ".emission", rep_dim, num_tags, rng),
      transitions(name + ".transitions", initial_transitions(num_tags)) {
    if (num_tags < 1) throw std::invalid_argument("CRF head needs at least one tag");
}

namespace {

void check_shapes(const Matrix& emissions, const Matrix& transitions) {
    const Eigen::Index T = emissions.cols();
    if (emissions.rows() < 1) throw std::invalid_argument("CRF: empty sequence");
    if (transitions.rows() != T + 2 || transitions.cols() != T + 2) {
        throw std::invalid_argument("CRF: transition table must be (T+2) x (T+2)");
    }
}

double lse(const Eigen::ArrayXd& x) { return log_sum_exp(x); }

struct Lattice {
    Matrix alpha;  // L x T
    Matrix beta;   // L x T
    double log_z = 0.0;
};

Lattice forward_backward(const Matrix& e, const Matrix& tr) {
    const Eigen::Index L = e.rows();
    const Eigen::Index T = e.cols();
    const Eigen::Index start = T;
    const Eigen::Index stop = T + 1;
    const Matrix inner = tr.topLeftCorner(T, T);
    Lattice lat;
    lat.alpha.resize(L, T);
    lat.beta.resize(L, T);
    for (Eigen::Index k = 0; k < T; ++k) lat.alpha(0, k) = tr(start, k) + e(0, k);
    for (Eigen::Index i = 1; i < L; ++i) {
        for (Eigen::Index k = 0; k < T; ++k) {
            lat.alpha(i, k) = e(i, k) + lse(lat.alpha.row(i - 1).transpose().array() + inner.col(k).array());
        }
    }
    for (Eigen::Index k = 0; k < T; ++k) lat.beta(L - 1, k) = tr(k, stop);
    for (Eigen::Index i = L - 2; i >= 0; --i) {
        const Eigen::ArrayXd next = e.row(i + 1).transpose().array() + lat.beta.row(i + 1).transpose().array();
        for (Eigen::Index j = 0; j < T; ++j) {
            lat.beta(i, j) = lse(inner.row(j).transpose().array() + next);
        }
    }
    lat.log_z = lse(lat.alpha.row(L - 1).transpose().array() + tr.block(0, stop, T, 1).array());
    return lat;
}

}  // namespace

double path_score(const Matrix& emissions, const IntVector& path, const Matrix& transitions) {
    check_shapes(emissions, transitions);
    const Eigen::Index T = emissions.cols();
    if (static_cast<Eigen::Index>(path.size()) != emissions.rows()) {
        throw std::invalid_argument("path_score: path length differs from sequence length");
    }
    for (int y : path) {
        if (y < 0 || y >= T) throw std::invalid_argument("path_score: label id out of range");
    }
    double s = transitions(T, path.front());
    for (std::size_t i = 0; i < path.size(); ++i) {
        s += emissions(static_cast<Eigen::Index>(i), path[i]);
        if (i > 0) s += transitions(path[i - 1], path[i]);
    }
    return s + transitions(path.back(), T + 1);
}

double log_partition(const Matrix& emissions, const Matrix& transitions) {
    check_shapes(emissions, transitions);
    return forward_backward(emissions, transitions).log_z;
}

Matrix crf_marginals(const Matrix& emissions, const Matrix& transitions) {
    check_shapes(emissions, transitions);
    const Lattice lat = forward_backward(emissions, transitions);
    return (lat.alpha + lat.beta).array().unaryExpr([&](double x) { return std::exp(x - lat.log_z); }).matrix();
}

double crf_nll(const Matrix& emissions, const IntVector& gold, const Matrix& transitions) {
    const double score = path_score(emissions, gold, transitions);
    const double nll = log_partition(emissions, transitions) - score;
    // rounding can leave a tiny negative value when one path dominates
    return std::max(nll, 0.0);
}

TagPath viterbi(const Matrix& emissions, const Matrix& transitions, const Matrix* allowed) {
    check_shapes(emissions, transitions);
    const Eigen::Index L = emissions.rows();
    const Eigen::Index T = emissions.cols();
    Matrix tr = transitions;
    if (allowed != nullptr) {
        for (Eigen::Index r = 0; r < tr.rows(); ++r) {
            for (Eigen::Index c = 0; c < tr.cols(); ++c) {
                if ((*allowed)(r, c) == 0.0) tr(r, c) = kNegInf;
            }
        }
    }
    Matrix delta(L, T);
    Eigen::MatrixXi back(L, T);
    for (Eigen::Index k = 0; k < T; ++k) delta(0, k) = tr(T, k) + emissions(0, k);
    for (Eigen::Index i = 1; i < L; ++i) {
        for (Eigen::Index k = 0; k < T; ++k) {
            Eigen::Index best = 0;
            double best_score = delta(i - 1, 0) + tr(0, k);
            for (Eigen::Index j = 1; j < T; ++j) {
                const double s = delta(i - 1, j) + tr(j, k);
                if (s > best_score) {
                    best_score = s;
                    best = j;
                }
            }
            delta(i, k) = best_score + emissions(i, k);
            back(i, k) = static_cast<int>(best);
        }
    }
    Eigen::Index last = 0;
    double best_final = delta(L - 1, 0) + tr(0, T + 1);
    for (Eigen::Index k = 1; k < T; ++k) {
        const double s = delta(L - 1, k) + tr(k, T + 1);
        if (s > best_final) {
            best_final = s;
            last = k;
        }
    }
    TagPath path;
    path.label_ids.resize(static_cast<std::size_t>(L));
    path.label_ids.back() = static_cast<int>(last);
    for (Eigen::Index i = L - 1; i > 0; --i) {
        path.label_ids[static_cast<std::size_t>(i - 1)] = back(i, path.label_ids[static_cast<std::size_t>(i)]);
    }
    path.score = best_final;
    return path;
}

Matrix bio_allowed_transitions(const LabelScheme& scheme) {
    const int T = scheme.size();
    Matrix allowed = Matrix::Ones(T + 2, T + 2);
    for (int k = 0; k < T; ++k) {
        if (scheme.prefix(k) != LabelScheme::Prefix::Inside) continue;
        allowed(T, k) = 0.0;
        for (int j = 0; j < T; ++j) {
            if (scheme.type_index(j) != scheme.type_index(k)) allowed(j, k) = 0.0;
        }
    }
    allowed.col(T).setZero();
    allowed.row(T + 1).setZero();
    return allowed;
}

ad::Var crf_nll_sum(const ad::Var& emissions, const ad::Var& transitions, const IntVector& gold,
                    const IntVector& lengths, int max_length) {
    const Matrix& E = emissions.value();
    const Matrix& tr = transitions.value();
    const Eigen::Index T = E.cols();
    if (tr.rows() != T + 2 || tr.cols() != T + 2) throw std::invalid_argument("crf_nll_sum: transition shape");
    if (E.rows() != static_cast<Eigen::Index>(lengths.size()) * max_length ||
        gold.size() != static_cast<std::size_t>(E.rows())) {
        throw std::invalid_argument("crf_nll_sum: batch layout mismatch");
    }
    Matrix dE = Matrix::Zero(E.rows(), T);
    Matrix dTr = Matrix::Zero(T + 2, T + 2);
    double total = 0.0;
    for (std::size_t b = 0; b < lengths.size(); ++b) {
        const int len = lengths[b];
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * max_length;
        const Matrix e = E.middleRows(r0, len);
        IntVector path(gold.begin() + r0, gold.begin() + r0 + len);
        const Lattice lat = forward_backward(e, tr);
        const double nll = lat.log_z - path_score(e, path, tr);
        total += nll;

        // d logZ: expected feature counts; d score: gold counts
        const Matrix node = (lat.alpha + lat.beta).array().unaryExpr([&](double x) {
            return std::exp(x - lat.log_z);
        }).matrix();
        dE.middleRows(r0, len) += node;
        for (Eigen::Index k = 0; k < T; ++k) {
            dTr(T, k) += node(0, k);
            dTr(k, T + 1) += node(len - 1, k);
        }
        for (Eigen::Index i = 1; i < len; ++i) {
            for (Eigen::Index j = 0; j < T; ++j) {
                for (Eigen::Index k = 0; k < T; ++k) {
                    dTr(j, k) += std::exp(lat.alpha(i - 1, j) + tr(j, k) + e(i, k) + lat.beta(i, k) - lat.log_z);
                }
            }
        }
        for (int i = 0; i < len; ++i) dE(r0 + i, path[static_cast<std::size_t>(i)]) -= 1.0;
        dTr(T, path.front()) -= 1.0;
        dTr(path.back(), T + 1) -= 1.0;
        for (int i = 1; i < len; ++i) dTr(path[static_cast<std::size_t>(i - 1)], path[static_cast<std::size_t>(i)]) -= 1.0;
    }
    Matrix out(1, 1);
    out(0, 0) = total;
    ad::Tape& tape = *emissions.tape();
    return tape.push(std::move(out), {emissions, transitions},
                     [emissions, transitions, dE = std::move(dE), dTr = std::move(dTr)](ad::Tape& tp, const Matrix& g) {
                         if (tp.needs_grad(emissions)) tp.accumulate(emissions, dE * g(0, 0));
                         if (tp.needs_grad(transitions)) tp.accumulate(transitions, dTr * g(0, 0));
                     });
}

Matrix tag_representation(const Matrix& z, const Matrix& v) {
    if (z.rows() != v.rows()) throw std::invalid_argument("tag_representation: row mismatch");
    Matrix out(z.rows(), z.cols() + v.cols());
    out << z, v;
    return out;
}

}  // namespace ssd
