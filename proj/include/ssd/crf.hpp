#pragma once

// Linear-chain CRF: path scores, forward-algorithm partition function,
// marginals, Viterbi decoding, and a batched negative log-likelihood op.

#include "ssd/autodiff.hpp"
#include "ssd/corpus.hpp"
#include "ssd/layers.hpp"

#include <string>
#include <vector>

namespace ssd {

/// Emission projection (d_rep -> T) and a (T+2) x (T+2) transition table whose
/// last two states are the virtual START (index T) and STOP (index T+1).
/// Transitions into START and out of STOP are -inf and never read.
struct CrfHead {
    Affine emission;
    ad::Parameter transitions;

    CrfHead() = default;
    CrfHead(const std::string& name, int rep_dim, int num_tags, Rng& rng);

    int num_tags() const { return emission.out_dim(); }
    std::vector<ad::Parameter*> parameters() { return {&emission.weight, &emission.bias, &transitions}; }
};

/// Zero transitions except the forbidden START/STOP entries.
Matrix initial_transitions(int num_tags);

struct TagPath {
    IntVector label_ids;
    double score = 0.0;
};

/// Sum of emissions[i, y_i] and transitions along START, y_1..y_L, STOP.
double path_score(const Matrix& emissions, const IntVector& path, const Matrix& transitions);
/// log of the sum over all T^L paths of exp(path_score).
double log_partition(const Matrix& emissions, const Matrix& transitions);
/// Per-position label marginals (L x T).
Matrix crf_marginals(const Matrix& emissions, const Matrix& transitions);
/// log_partition - path_score(gold); non-negative.
double crf_nll(const Matrix& emissions, const IntVector& gold, const Matrix& transitions);

/// Highest-scoring path. Ties resolve to the lowest label id at every
/// backtracking step. `allowed`, when given, is a (T+2) x (T+2) 0/1 table of
/// permitted transitions.
TagPath viterbi(const Matrix& emissions, const Matrix& transitions, const Matrix* allowed = nullptr);

/// Permitted BIO transitions: I-X only after B-X or I-X, never first.
Matrix bio_allowed_transitions(const LabelScheme& scheme);

/// Sum of per-sentence NLLs for a padded batch of emissions (rows b*L + i).
ad::Var crf_nll_sum(const ad::Var& emissions, const ad::Var& transitions, const IntVector& gold,
                    const IntVector& lengths, int max_length);

/// Per-token z ⊕ v.
Matrix tag_representation(const Matrix& z, const Matrix& v);

}  // namespace ssd
