#pragma once

// Token input embedding: word lookup concatenated with a character CNN feature.

#include "ssd/autodiff.hpp"
#include "ssd/corpus.hpp"

#include <istream>
#include <vector>

namespace ssd {

struct EmbedderConfig {
    int word_dim = 100;
    int char_dim = 100;
    int char_filters = 100;
    int char_window = 3;
};

/// Word and character tables plus one convolution (window x char_dim -> filters).
/// PAD rows are kept at zero: lookups of PAD never produce a gradient.
struct Embedder {
    EmbedderConfig config;
    ad::Parameter word_table;
    ad::Parameter char_table;
    ad::Parameter conv_weight;
    ad::Parameter conv_bias;

    Embedder() = default;
    Embedder(const EmbedderConfig& cfg, int word_vocab, int char_vocab, Rng& rng);

    int output_dim() const { return config.word_dim + config.char_filters; }
    std::vector<ad::Parameter*> parameters();
    /// Replaces the word table (e.g. with pretrained vectors); PAD row is zeroed.
    void set_word_vectors(Matrix vectors);
};

/// Character features for every row of a padded grid: conv (same padding with
/// PAD characters), ReLU, max over the row's real characters. Rows with zero
/// characters produce zero features.
ad::Var char_features(ad::Tape& tape, const IntVector& char_ids, const IntVector& char_lengths,
                      int max_chars, Embedder& embedder, bool trainable);

/// Embedding of every batch position (padded positions are zero rows).
ad::Var embed_batch(ad::Tape& tape, const Batch& batch, Embedder& embedder, bool trainable);

/// Single-token character feature; `char_ids` may carry trailing PAD ids,
/// which are ignored; an all-PAD word yields zeros.
RowVector char_feature(const IntVector& char_ids, const Embedder& embedder);
RowVector embed_token(int word_id, const IntVector& char_ids, const Embedder& embedder);

/// Reads "word v1 ... vd" rows. Vocabulary words found in the file get the
/// file vector, all others keep a uniform +-sqrt(3/d) initialization. The
/// dimension comes from the first row, or `default_dim` for an empty file.
Matrix load_pretrained(std::istream& in, const Vocabulary& vocab, int default_dim, Rng& rng);

/// Uniform +-sqrt(3/dim) rows with a zero PAD row.
Matrix init_embedding_table(int rows, int dim, Rng& rng);

}  // namespace ssd
