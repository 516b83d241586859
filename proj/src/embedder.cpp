#include "ssd/embedder.hpp"

#include "ssd/error.hpp"
#include "ssd/layers.hpp"

#include <sstream>
#include <stdexcept>

namespace ssd {

Matrix init_embedding_table(int rows, int dim, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(dim));
    Matrix m(rows, dim);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
    }
    if (rows > 0) m.row(kPadId).setZero();
    return m;
}

Embedder::Embedder(const EmbedderConfig& cfg, int word_vocab, int char_vocab, Rng& rng) : config(cfg) {
    if (cfg.word_dim < 1 || cfg.char_dim < 1 || cfg.char_filters < 1 || cfg.char_window < 1) {
        throw std::invalid_argument("embedder dimensions must be positive");
    }
    word_table = ad::Parameter("embedder.word_table", init_embedding_table(word_vocab, cfg.word_dim, rng));
    char_table = ad::Parameter("embedder.char_table", init_embedding_table(char_vocab, cfg.char_dim, rng));
    conv_weight = ad::Parameter("embedder.conv_weight",
                                glorot_uniform(cfg.char_window * cfg.char_dim, cfg.char_filters, rng));
    conv_bias = ad::Parameter("embedder.conv_bias", Matrix::Zero(1, cfg.char_filters));
}

std::vector<ad::Parameter*> Embedder::parameters() { return {&word_table, &char_table, &conv_weight, &conv_bias}; }

void Embedder::set_word_vectors(Matrix vectors) {
    if (vectors.rows() != word_table.value.rows()) {
        throw std::invalid_argument("set_word_vectors: row count differs from vocabulary");
    }
    vectors.row(kPadId).setZero();
    config.word_dim = static_cast<int>(vectors.cols());
    word_table = ad::Parameter(word_table.name, std::move(vectors));
}

ad::Var char_features(ad::Tape& tape, const IntVector& char_ids, const IntVector& char_lengths,
                      int max_chars, Embedder& embedder, bool trainable) {
    const int window = embedder.config.char_window;
    const int left = (window - 1) / 2;
    const int rows = static_cast<int>(char_lengths.size());

    // one conv position per real character; window entries outside the word read PAD
    std::vector<IntVector> window_ids(static_cast<std::size_t>(window));
    std::vector<std::pair<int, int>> segments;
    IntVector row_to_segment(static_cast<std::size_t>(rows), -1);
    int positions = 0;
    for (int r = 0; r < rows; ++r) {
        const int len = char_lengths[static_cast<std::size_t>(r)];
        if (len <= 0) continue;
        if (len > max_chars) throw std::invalid_argument("char_features: length exceeds grid");
        row_to_segment[static_cast<std::size_t>(r)] = static_cast<int>(segments.size());
        segments.emplace_back(positions, len);
        for (int j = 0; j < len; ++j) {
            for (int o = 0; o < window; ++o) {
                const int src = j + o - left;
                const int id = (src >= 0 && src < len)
                                   ? char_ids[static_cast<std::size_t>(r * max_chars + src)]
                                   : kPadId;
                window_ids[static_cast<std::size_t>(o)].push_back(id);
            }
        }
        positions += len;
    }

    const int filters = embedder.config.char_filters;
    if (segments.empty()) return tape.constant(Matrix::Zero(rows, filters));

    ad::Var table = trainable ? tape.param(embedder.char_table) : tape.frozen(embedder.char_table);
    std::vector<ad::Var> parts;
    parts.reserve(static_cast<std::size_t>(window));
    for (const auto& ids : window_ids) parts.push_back(ad::lookup(table, ids, kPadId));
    ad::Var unfolded = window == 1 ? parts.front() : ad::concat_cols(parts);
    ad::Var w = trainable ? tape.param(embedder.conv_weight) : tape.frozen(embedder.conv_weight);
    ad::Var b = trainable ? tape.param(embedder.conv_bias) : tape.frozen(embedder.conv_bias);
    ad::Var response = ad::relu(ad::affine(unfolded, w, b));
    ad::Var pooled = ad::segment_max(response, segments);
    bool dense = static_cast<int>(segments.size()) == rows;
    if (dense) return pooled;
    return ad::select_rows(pooled, row_to_segment);
}

ad::Var embed_batch(ad::Tape& tape, const Batch& batch, Embedder& embedder, bool trainable) {
    ad::Var table = trainable ? tape.param(embedder.word_table) : tape.frozen(embedder.word_table);
    ad::Var words = ad::lookup(table, batch.word_ids, kPadId);
    ad::Var chars = char_features(tape, batch.char_ids, batch.char_lengths, batch.max_chars, embedder, trainable);
    return ad::concat_cols({words, chars});
}

RowVector char_feature(const IntVector& char_ids, const Embedder& embedder) {
    int len = static_cast<int>(char_ids.size());
    while (len > 0 && char_ids[static_cast<std::size_t>(len - 1)] == kPadId) --len;
    for (int id : char_ids) {
        if (id < 0 || id >= embedder.char_table.value.rows()) throw std::out_of_range("char id out of range");
    }
    if (len == 0) return RowVector::Zero(embedder.config.char_filters);
    ad::Tape tape;
    auto& e = const_cast<Embedder&>(embedder);
    ad::Var out = char_features(tape, char_ids, {len}, static_cast<int>(char_ids.size()), e, false);
    return out.value().row(0);
}

RowVector embed_token(int word_id, const IntVector& char_ids, const Embedder& embedder) {
    if (word_id < 0 || word_id >= embedder.word_table.value.rows()) throw std::out_of_range("word id out of range");
    RowVector out(embedder.output_dim());
    out.head(embedder.config.word_dim) = embedder.word_table.value.row(word_id);
    out.tail(embedder.config.char_filters) = char_feature(char_ids, embedder);
    return out;
}

Matrix load_pretrained(std::istream& in, const Vocabulary& vocab, int default_dim, Rng& rng) {
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::string line;
    std::size_t line_no = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string word;
        if (!(ss >> word)) continue;
        std::vector<double> values;
        double x = 0.0;
        while (ss >> x) values.push_back(x);
        if (!ss.eof()) throw FormatError("non-numeric embedding value", line_no);
        if (values.empty()) throw FormatError("embedding row has no values", line_no);
        if (dim < 0) dim = static_cast<int>(values.size());
        if (static_cast<int>(values.size()) != dim) {
            throw FormatError("embedding row has " + std::to_string(values.size()) + " values, expected " +
                                  std::to_string(dim),
                              line_no);
        }
        rows.emplace_back(std::move(word), std::move(values));
    }
    if (dim < 0) dim = default_dim;
    Matrix table = init_embedding_table(vocab.word_size(), dim, rng);
    std::vector<bool> filled(static_cast<std::size_t>(vocab.word_size()), false);
    for (const auto& [word, values] : rows) {
        const int id = vocab.word_id(word);
        if (id == kUnkId || id == kPadId) continue;
        if (filled[static_cast<std::size_t>(id)]) continue;
        filled[static_cast<std::size_t>(id)] = true;
        for (int c = 0; c < dim; ++c) table(id, c) = values[static_cast<std::size_t>(c)];
    }
    return table;
}

}  // namespace ssd
