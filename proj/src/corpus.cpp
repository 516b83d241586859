#include "ssd/corpus.hpp"

#include "ssd/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace ssd {

LabelScheme::LabelScheme(std::string domain_name, std::vector<std::string> entity_types)
    : domain_name_(std::move(domain_name)), entity_types_(std::move(entity_types)) {
    tags_.push_back("O");
    for (const auto& t : entity_types_) {
        if (t.empty()) throw SchemeError("empty entity type");
        tags_.push_back("B-" + t);
        tags_.push_back("I-" + t);
    }
    for (std::size_t i = 0; i < tags_.size(); ++i) {
        if (!ids_.emplace(tags_[i], static_cast<int>(i)).second) {
            throw SchemeError("duplicate entity type in scheme: " + tags_[i]);
        }
    }
}

LabelScheme::ParsedTag LabelScheme::parse_tag(const std::string& tag) {
    if (tag == "O") return {Prefix::Outside, ""};
    if (tag.size() > 2 && tag[1] == '-' && (tag[0] == 'B' || tag[0] == 'I')) {
        return {tag[0] == 'B' ? Prefix::Begin : Prefix::Inside, tag.substr(2)};
    }
    throw SchemeError("tag does not match O / B-X / I-X: '" + tag + "'");
}

const std::string& LabelScheme::tag(int id) const {
    if (id < 0 || id >= size()) throw SchemeError("label id out of range: " + std::to_string(id));
    return tags_[static_cast<std::size_t>(id)];
}

int LabelScheme::id(const std::string& tag) const {
    auto found = find(tag);
    if (!found) throw SchemeError("tag not in scheme '" + domain_name_ + "': " + tag);
    return *found;
}

std::optional<int> LabelScheme::find(const std::string& tag) const {
    auto it = ids_.find(tag);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

bool LabelScheme::has_type(const std::string& type) const {
    return std::find(entity_types_.begin(), entity_types_.end(), type) != entity_types_.end();
}

LabelScheme::Prefix LabelScheme::prefix(int id) const {
    if (id == 0) return Prefix::Outside;
    return (id - 1) % 2 == 0 ? Prefix::Begin : Prefix::Inside;
}

std::vector<std::string> repair_bio(const std::vector<std::string>& tags) {
    std::vector<std::string> out = tags;
    std::string open_type;
    bool open = false;
    for (auto& t : out) {
        const auto parsed = LabelScheme::parse_tag(t);
        switch (parsed.prefix) {
            case LabelScheme::Prefix::Outside:
                open = false;
                break;
            case LabelScheme::Prefix::Begin:
                open = true;
                open_type = parsed.type;
                break;
            case LabelScheme::Prefix::Inside:
                if (!open || open_type != parsed.type) {
                    t = "B-" + parsed.type;
                    open = true;
                    open_type = parsed.type;
                }
                break;
        }
    }
    return out;
}

IntVector repair_bio(const IntVector& tags, const LabelScheme& scheme) {
    IntVector out = tags;
    int open_type = -1;
    for (auto& t : out) {
        scheme.tag(t);  // range check
        switch (scheme.prefix(t)) {
            case LabelScheme::Prefix::Outside:
                open_type = -1;
                break;
            case LabelScheme::Prefix::Begin:
                open_type = scheme.type_index(t);
                break;
            case LabelScheme::Prefix::Inside:
                if (open_type != scheme.type_index(t)) {
                    t = scheme.begin_id(scheme.type_index(t));
                    open_type = scheme.type_index(t);
                }
                break;
        }
    }
    return out;
}

bool is_bio_consistent(const IntVector& tags, const LabelScheme& scheme) {
    return repair_bio(tags, scheme) == tags;
}

std::vector<Sentence> split_long_sentence(const Sentence& s, const LabelScheme& scheme,
                                          std::size_t max_length) {
    if (max_length == 0) throw std::invalid_argument("max_length must be positive");
    std::vector<Sentence> out;
    std::size_t start = 0;
    const std::size_t n = s.size();
    while (n - start > max_length) {
        // candidate cut c means the chunk is [start, c); prefer a cut at an O tag
        std::size_t cut = 0;
        for (std::size_t c = start + max_length; c > start; --c) {
            if (scheme.prefix(s.label_ids[c]) == LabelScheme::Prefix::Outside) {
                cut = c;
                break;
            }
        }
        if (cut == 0) {
            for (std::size_t c = start + max_length; c > start; --c) {
                if (scheme.prefix(s.label_ids[c]) != LabelScheme::Prefix::Inside) {
                    cut = c;
                    break;
                }
            }
        }
        if (cut == 0) cut = start + max_length;
        Sentence chunk;
        chunk.domain_id = s.domain_id;
        chunk.words.assign(s.words.begin() + static_cast<std::ptrdiff_t>(start),
                           s.words.begin() + static_cast<std::ptrdiff_t>(cut));
        chunk.label_ids.assign(s.label_ids.begin() + static_cast<std::ptrdiff_t>(start),
                               s.label_ids.begin() + static_cast<std::ptrdiff_t>(cut));
        chunk.label_ids = repair_bio(chunk.label_ids, scheme);
        out.push_back(std::move(chunk));
        start = cut;
    }
    Sentence tail;
    tail.domain_id = s.domain_id;
    tail.words.assign(s.words.begin() + static_cast<std::ptrdiff_t>(start), s.words.end());
    tail.label_ids.assign(s.label_ids.begin() + static_cast<std::ptrdiff_t>(start), s.label_ids.end());
    tail.label_ids = repair_bio(tail.label_ids, scheme);
    out.push_back(std::move(tail));
    return out;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> cols;
    std::istringstream ss(line);
    std::string c;
    while (ss >> c) cols.push_back(c);
    return cols;
}

bool is_blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Corpus parse_conll(std::istream& in, const ConllOptions& options) {
    struct RawSentence {
        std::vector<std::string> words;
        std::vector<std::string> tags;
    };
    std::vector<RawSentence> raw;
    RawSentence current;
    std::set<std::string> types;
    const std::size_t need = std::max(options.token_column, options.label_column) + 1;

    std::string line;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (!current.words.empty()) {
            current.tags = repair_bio(current.tags);
            raw.push_back(std::move(current));
        }
        current = RawSentence{};
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (is_blank(line)) {
            flush();
            continue;
        }
        auto cols = split_ws(line);
        if (cols.front() == "-DOCSTART-") {
            flush();
            continue;
        }
        if (cols.size() < need) {
            throw FormatError("expected at least " + std::to_string(need) + " columns, found " +
                                  std::to_string(cols.size()),
                              line_no);
        }
        const std::string& tag = cols[options.label_column];
        const auto parsed = LabelScheme::parse_tag(tag);
        if (parsed.prefix != LabelScheme::Prefix::Outside) types.insert(parsed.type);
        current.words.push_back(cols[options.token_column]);
        current.tags.push_back(tag);
    }
    flush();

    Corpus corpus;
    corpus.domain_id = options.domain_id;
    corpus.scheme = LabelScheme(options.domain_name, {types.begin(), types.end()});
    for (auto& r : raw) {
        Sentence s;
        s.domain_id = options.domain_id;
        s.words = std::move(r.words);
        for (const auto& t : r.tags) s.label_ids.push_back(corpus.scheme.id(t));
        for (auto& chunk : split_long_sentence(s, corpus.scheme, options.max_length)) {
            corpus.sentences.push_back(std::move(chunk));
        }
    }
    return corpus;
}

Corpus parse_conll(std::istream& in, std::size_t token_column, std::size_t label_column,
                   int domain_id) {
    ConllOptions o;
    o.token_column = token_column;
    o.label_column = label_column;
    o.domain_id = domain_id;
    return parse_conll(in, o);
}

Corpus read_conll_file(const std::string& path, const ConllOptions& options) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    return parse_conll(in, options);
}

void write_conll(std::ostream& out, const Corpus& corpus) {
    for (const auto& s : corpus.sentences) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            out << s.words[i] << ' ' << corpus.scheme.tag(s.label_ids[i]) << '\n';
        }
        out << '\n';
    }
}

Corpus relabel(const Corpus& corpus, const LabelScheme& scheme) {
    Corpus out;
    out.scheme = scheme;
    out.domain_id = corpus.domain_id;
    out.sentences.reserve(corpus.size());
    for (const auto& s : corpus.sentences) {
        Sentence t = s;
        for (auto& id : t.label_ids) {
            const std::string& tag = corpus.scheme.tag(id);
            auto mapped = scheme.find(tag);
            if (!mapped) throw SchemeError("label '" + tag + "' not in target scheme");
            id = *mapped;
        }
        out.sentences.push_back(std::move(t));
    }
    return out;
}

Corpus split_target_fraction(const Corpus& corpus, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("fraction must lie in (0, 1]");
    }
    std::vector<std::size_t> idx(corpus.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
    Corpus out;
    out.scheme = corpus.scheme;
    out.domain_id = corpus.domain_id;
    for (std::size_t i = 0; i < keep; ++i) out.sentences.push_back(corpus.sentences[idx[i]]);
    return out;
}

std::string normalize_word(const std::string& surface) {
    std::string out = surface;
    for (auto& c : out) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isdigit(u)) {
            c = '0';
        } else if (u < 0x80) {
            c = static_cast<char>(std::tolower(u));
        }
    }
    return out;
}

std::vector<std::string> normalize_chars(const std::string& surface) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < surface.size()) {
        const auto u = static_cast<unsigned char>(surface[i]);
        std::size_t len = 1;
        if (u >= 0xF0) {
            len = 4;
        } else if (u >= 0xE0) {
            len = 3;
        } else if (u >= 0xC0) {
            len = 2;
        }
        len = std::min(len, surface.size() - i);
        std::string ch = surface.substr(i, len);
        if (len == 1 && std::isdigit(u)) ch = "0";
        out.push_back(std::move(ch));
        i += len;
    }
    return out;
}

Vocabulary::Vocabulary() : words_{"<pad>", "<unk>"}, chars_{"<pad>", "<unk>"} {
    word_ids_ = {{"<pad>", kPadId}, {"<unk>", kUnkId}};
    char_ids_ = {{"<pad>", kPadId}, {"<unk>", kUnkId}};
}

namespace {

std::vector<std::string> rank_by_frequency(const std::unordered_map<std::string, int>& counts,
                                           int min_freq) {
    std::vector<std::pair<std::string, int>> items;
    for (const auto& [k, n] : counts) {
        if (n >= min_freq) items.emplace_back(k, n);
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    out.reserve(items.size());
    for (auto& it : items) out.push_back(std::move(it.first));
    return out;
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<const Corpus*>& corpora, int min_word_freq) {
    if (corpora.empty()) throw std::invalid_argument("build_vocab: no corpora given");
    if (min_word_freq < 1) throw std::invalid_argument("build_vocab: min_word_freq must be >= 1");
    std::unordered_map<std::string, int> word_counts;
    std::unordered_map<std::string, int> char_counts;
    for (const Corpus* c : corpora) {
        for (const auto& s : c->sentences) {
            for (const auto& w : s.words) {
                ++word_counts[normalize_word(w)];
                for (const auto& ch : normalize_chars(w)) ++char_counts[ch];
            }
        }
    }
    std::vector<std::string> words{"<pad>", "<unk>"};
    std::vector<std::string> chars{"<pad>", "<unk>"};
    for (auto& w : rank_by_frequency(word_counts, min_word_freq)) {
        if (w != "<pad>" && w != "<unk>") words.push_back(std::move(w));
    }
    for (auto& ch : rank_by_frequency(char_counts, 1)) {
        if (ch != "<pad>" && ch != "<unk>") chars.push_back(std::move(ch));
    }
    return from_lists(std::move(words), std::move(chars));
}

Vocabulary Vocabulary::from_lists(std::vector<std::string> words, std::vector<std::string> chars) {
    if (words.size() < 2 || chars.size() < 2) throw FormatError("vocabulary lacks reserved entries");
    Vocabulary v;
    v.words_ = std::move(words);
    v.chars_ = std::move(chars);
    v.word_ids_.clear();
    v.char_ids_.clear();
    for (std::size_t i = 0; i < v.words_.size(); ++i) {
        if (!v.word_ids_.emplace(v.words_[i], static_cast<int>(i)).second) {
            throw FormatError("duplicate vocabulary word: " + v.words_[i]);
        }
    }
    for (std::size_t i = 0; i < v.chars_.size(); ++i) {
        if (!v.char_ids_.emplace(v.chars_[i], static_cast<int>(i)).second) {
            throw FormatError("duplicate vocabulary character: " + v.chars_[i]);
        }
    }
    return v;
}

int Vocabulary::word_id(const std::string& surface) const {
    auto it = word_ids_.find(normalize_word(surface));
    return it == word_ids_.end() ? kUnkId : it->second;
}

int Vocabulary::char_id(const std::string& ch) const {
    auto it = char_ids_.find(ch);
    return it == char_ids_.end() ? kUnkId : it->second;
}

Token Vocabulary::encode_token(const std::string& surface) const {
    if (surface.empty()) throw std::invalid_argument("empty token surface");
    Token t;
    t.surface = surface;
    t.word_id = word_id(surface);
    for (const auto& ch : normalize_chars(surface)) t.char_ids.push_back(char_id(ch));
    return t;
}

EncodedSentence Vocabulary::encode(const Sentence& s) const {
    EncodedSentence e;
    e.domain_id = s.domain_id;
    e.label_ids = s.label_ids;
    e.tokens.reserve(s.size());
    for (const auto& w : s.words) e.tokens.push_back(encode_token(w));
    return e;
}

EncodedCorpus Vocabulary::encode(const Corpus& c) const {
    EncodedCorpus e;
    e.scheme = c.scheme;
    e.domain_id = c.domain_id;
    e.sentences.reserve(c.size());
    for (const auto& s : c.sentences) e.sentences.push_back(encode(s));
    return e;
}

void Vocabulary::save_words(std::ostream& out) const {
    for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << i << '\n';
}

void Vocabulary::save_chars(std::ostream& out) const {
    for (std::size_t i = 0; i < chars_.size(); ++i) out << chars_[i] << '\t' << i << '\n';
}

namespace {

std::vector<std::string> read_id_list(std::istream& in) {
    std::vector<std::pair<int, std::string>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw FormatError("expected token<TAB>id", line_no);
        int id = 0;
        try {
            id = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw FormatError("bad id", line_no);
        }
        rows.emplace_back(id, line.substr(0, tab));
    }
    std::sort(rows.begin(), rows.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].first != static_cast<int>(i)) throw FormatError("vocabulary ids are not dense");
        out.push_back(rows[i].second);
    }
    return out;
}

}  // namespace

Vocabulary Vocabulary::load(std::istream& words, std::istream& chars) {
    return from_lists(read_id_list(words), read_id_list(chars));
}

int Batch::token_count() const {
    int n = 0;
    for (int l : lengths) n += l;
    return n;
}

std::vector<std::pair<int, int>> Batch::segments() const {
    std::vector<std::pair<int, int>> seg;
    seg.reserve(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) seg.emplace_back(row(b, 0), lengths[static_cast<std::size_t>(b)]);
    return seg;
}

Batch make_batch(const std::vector<const EncodedSentence*>& sentences, int min_padded_length) {
    if (sentences.empty()) throw std::invalid_argument("make_batch: no sentences");
    Batch b;
    b.batch_size = static_cast<int>(sentences.size());
    b.max_length = min_padded_length;
    b.max_chars = 1;
    for (const auto* s : sentences) {
        if (s->size() == 0) throw std::invalid_argument("make_batch: empty sentence");
        b.max_length = std::max(b.max_length, static_cast<int>(s->size()));
        for (const auto& t : s->tokens) b.max_chars = std::max(b.max_chars, static_cast<int>(t.char_ids.size()));
    }
    const auto rows = static_cast<std::size_t>(b.rows());
    b.word_ids.assign(rows, kPadId);
    b.label_ids.assign(rows, 0);
    b.mask.assign(rows, false);
    b.char_lengths.assign(rows, 0);
    b.char_ids.assign(rows * static_cast<std::size_t>(b.max_chars), kPadId);
    for (int i = 0; i < b.batch_size; ++i) {
        const auto& s = *sentences[static_cast<std::size_t>(i)];
        b.lengths.push_back(static_cast<int>(s.size()));
        b.domain_ids.push_back(s.domain_id);
        for (std::size_t t = 0; t < s.size(); ++t) {
            const auto r = static_cast<std::size_t>(b.row(i, static_cast<int>(t)));
            b.word_ids[r] = s.tokens[t].word_id;
            b.label_ids[r] = s.label_ids[t];
            b.mask[r] = true;
            const auto& chars = s.tokens[t].char_ids;
            b.char_lengths[r] = static_cast<int>(chars.size());
            for (std::size_t j = 0; j < chars.size(); ++j) {
                b.char_ids[r * static_cast<std::size_t>(b.max_chars) + j] = chars[j];
            }
        }
    }
    return b;
}

Batch make_batch(const std::vector<EncodedSentence>& sentences, int min_padded_length) {
    std::vector<const EncodedSentence*> ptrs;
    ptrs.reserve(sentences.size());
    for (const auto& s : sentences) ptrs.push_back(&s);
    return make_batch(ptrs, min_padded_length);
}

namespace {

std::vector<Batch> batches_in_order(const EncodedCorpus& corpus, const std::vector<std::size_t>& order,
                                    int batch_size) {
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        std::vector<const EncodedSentence*> chunk;
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < end; ++i) chunk.push_back(&corpus.sentences[order[i]]);
        out.push_back(make_batch(chunk));
    }
    return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    return idx;
}

}  // namespace

std::vector<Batch> make_batches(const EncodedCorpus& corpus, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    if (corpus.empty()) throw std::invalid_argument("make_batches: empty corpus");
    return batches_in_order(corpus, shuffled_indices(corpus.size(), seed), batch_size);
}

BatchStream::BatchStream(const EncodedCorpus* corpus, int batch_size, std::uint64_t seed)
    : corpus_(corpus), batch_size_(batch_size), seed_(seed) {
    if (corpus_ == nullptr || corpus_->empty()) throw std::invalid_argument("BatchStream: empty corpus");
    if (batch_size < 1) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
    reshuffle();
}

void BatchStream::reshuffle() { order_ = shuffled_indices(corpus_->size(), Rng::derive(seed_, epoch_)); }

void BatchStream::seek(std::uint64_t epoch, std::size_t cursor) {
    epoch_ = epoch;
    cursor_ = cursor;
    reshuffle();
}

Batch BatchStream::next() {
    if (cursor_ >= order_.size()) {
        ++epoch_;
        cursor_ = 0;
        reshuffle();
    }
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
    std::vector<const EncodedSentence*> chunk;
    for (std::size_t i = cursor_; i < end; ++i) chunk.push_back(&corpus_->sentences[order_[i]]);
    cursor_ = end;
    ++reads_;
    return make_batch(chunk);
}

}  // namespace ssd
