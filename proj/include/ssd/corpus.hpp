#pragma once

// Column-formatted corpora, BIO label schemes, vocabularies and batching.

#include "ssd/tensor.hpp"

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ssd {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSourceDomain = 0;
inline constexpr int kTargetDomain = 1;

/// BIO expansion of an ordered set of entity types.
///
/// Tag 0 is O; entity type k owns B-X = 1 + 2k and I-X = 2 + 2k.
class LabelScheme {
public:
    enum class Prefix { Outside, Begin, Inside };
    struct ParsedTag {
        Prefix prefix;
        std::string type;
    };

    LabelScheme() : LabelScheme("", {}) {}
    LabelScheme(std::string domain_name, std::vector<std::string> entity_types);

    /// Splits "B-PER" into (Begin, "PER"); throws SchemeError for anything else.
    static ParsedTag parse_tag(const std::string& tag);

    const std::string& domain_name() const { return domain_name_; }
    const std::vector<std::string>& entity_types() const { return entity_types_; }
    int size() const { return static_cast<int>(tags_.size()); }
    const std::string& tag(int id) const;
    int id(const std::string& tag) const;
    std::optional<int> find(const std::string& tag) const;
    bool has_type(const std::string& type) const;

    Prefix prefix(int id) const;
    /// Entity type index of a B/I tag, -1 for O.
    int type_index(int id) const { return id == 0 ? -1 : (id - 1) / 2; }
    int begin_id(int type_index) const { return 1 + 2 * type_index; }
    int inside_id(int type_index) const { return 2 + 2 * type_index; }

    bool operator==(const LabelScheme& other) const {
        return entity_types_ == other.entity_types_;
    }

private:
    std::string domain_name_;
    std::vector<std::string> entity_types_;
    std::vector<std::string> tags_;
    std::map<std::string, int> ids_;
};

struct Sentence {
    std::vector<std::string> words;
    IntVector label_ids;
    int domain_id = kSourceDomain;

    std::size_t size() const { return words.size(); }
};

struct Corpus {
    std::vector<Sentence> sentences;
    LabelScheme scheme;
    int domain_id = kSourceDomain;

    std::size_t size() const { return sentences.size(); }
    bool empty() const { return sentences.empty(); }
};

struct ConllOptions {
    std::size_t token_column = 0;
    std::size_t label_column = 1;
    int domain_id = kSourceDomain;
    std::string domain_name;
    /// Sentences longer than this are split at the nearest O tag.
    std::size_t max_length = 128;
};

/// Reads whitespace-separated columns; blank lines end sentences and
/// "-DOCSTART-" lines are skipped. Label scheme is inferred from the tags seen
/// (types sorted); I-X tags without a matching opener are repaired to B-X.
Corpus parse_conll(std::istream& in, const ConllOptions& options);
Corpus parse_conll(std::istream& in, std::size_t token_column, std::size_t label_column,
                   int domain_id);
Corpus read_conll_file(const std::string& path, const ConllOptions& options);

/// Writes "token label" lines with a blank line after every sentence.
void write_conll(std::ostream& out, const Corpus& corpus);

/// Re-expresses a corpus under another scheme; throws SchemeError for unknown types.
Corpus relabel(const Corpus& corpus, const LabelScheme& scheme);

/// Rewrites every I-X not preceded by B-X / I-X of the same type to B-X.
std::vector<std::string> repair_bio(const std::vector<std::string>& tags);
IntVector repair_bio(const IntVector& tags, const LabelScheme& scheme);
bool is_bio_consistent(const IntVector& tags, const LabelScheme& scheme);

/// Splits an over-long sentence into chunks of at most max_length tokens
/// without cutting an entity whenever an O tag allows it.
std::vector<Sentence> split_long_sentence(const Sentence& s, const LabelScheme& scheme,
                                          std::size_t max_length);

/// Uniform subset of round(fraction * size) sentences in sampled order.
Corpus split_target_fraction(const Corpus& corpus, double fraction, std::uint64_t seed);

/// Word key used for embedding lookup: lowercase, digits mapped to '0'.
std::string normalize_word(const std::string& surface);
/// Characters used by the char-CNN: original case, digits mapped to '0'.
/// Multi-byte UTF-8 sequences stay together as one character.
std::vector<std::string> normalize_chars(const std::string& surface);

struct Token {
    std::string surface;
    int word_id = kPadId;
    IntVector char_ids;
};

struct EncodedSentence {
    std::vector<Token> tokens;
    IntVector label_ids;
    int domain_id = kSourceDomain;

    std::size_t size() const { return tokens.size(); }
};

struct EncodedCorpus {
    std::vector<EncodedSentence> sentences;
    LabelScheme scheme;
    int domain_id = kSourceDomain;

    std::size_t size() const { return sentences.size(); }
    bool empty() const { return sentences.empty(); }
};

class Vocabulary {
public:
    Vocabulary();

    /// Words at or above min_word_freq and every observed character receive
    /// ids, ordered by frequency (descending) then lexicographically.
    static Vocabulary build(const std::vector<const Corpus*>& corpora, int min_word_freq = 1);

    int word_size() const { return static_cast<int>(words_.size()); }
    int char_size() const { return static_cast<int>(chars_.size()); }
    int word_id(const std::string& surface) const;
    int char_id(const std::string& ch) const;
    const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    const std::string& character(int id) const { return chars_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& words() const { return words_; }
    const std::vector<std::string>& chars() const { return chars_; }

    Token encode_token(const std::string& surface) const;
    EncodedSentence encode(const Sentence& s) const;
    EncodedCorpus encode(const Corpus& c) const;

    /// "token<TAB>id" lines ordered by id.
    void save_words(std::ostream& out) const;
    void save_chars(std::ostream& out) const;
    static Vocabulary load(std::istream& words, std::istream& chars);
    static Vocabulary from_lists(std::vector<std::string> words, std::vector<std::string> chars);

    bool operator==(const Vocabulary& other) const {
        return words_ == other.words_ && chars_ == other.chars_;
    }

private:
    std::vector<std::string> words_;
    std::vector<std::string> chars_;
    std::map<std::string, int> word_ids_;
    std::map<std::string, int> char_ids_;
};

/// Padded mini-batch. Grids are flattened row-major: position (b, i) lives at
/// b * max_length + i, character j of that token at (b * max_length + i) * max_chars + j.
struct Batch {
    int batch_size = 0;
    int max_length = 0;
    int max_chars = 0;
    IntVector word_ids;
    IntVector char_ids;
    IntVector char_lengths;
    IntVector label_ids;
    std::vector<bool> mask;
    IntVector domain_ids;
    IntVector lengths;

    int row(int b, int i) const { return b * max_length + i; }
    int rows() const { return batch_size * max_length; }
    int token_count() const;
    /// (start row, length) per sentence.
    std::vector<std::pair<int, int>> segments() const;
};

/// Pads the given sentences into one batch; max_length may force extra padding.
Batch make_batch(const std::vector<const EncodedSentence*>& sentences, int min_padded_length = 0);
Batch make_batch(const std::vector<EncodedSentence>& sentences, int min_padded_length = 0);

/// One epoch of batches in a seed-determined order.
std::vector<Batch> make_batches(const EncodedCorpus& corpus, int batch_size, std::uint64_t seed);

/// Endless batch stream cycling epochs; epoch e is shuffled with a seed derived
/// from (seed, e). Position is (epoch, cursor) and can be saved and restored.
class BatchStream {
public:
    BatchStream() = default;
    BatchStream(const EncodedCorpus* corpus, int batch_size, std::uint64_t seed);

    Batch next();
    std::uint64_t epoch() const { return epoch_; }
    std::size_t cursor() const { return cursor_; }
    void seek(std::uint64_t epoch, std::size_t cursor);
    std::size_t reads() const { return reads_; }

private:
    void reshuffle();

    const EncodedCorpus* corpus_ = nullptr;
    int batch_size_ = 1;
    std::uint64_t seed_ = 0;
    std::uint64_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::size_t reads_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace ssd
