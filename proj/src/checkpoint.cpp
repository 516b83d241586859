#include "ssd/checkpoint.hpp"

#include "ssd/error.hpp"
#include "ssd/io.hpp"

#include <cstring>
#include <iterator>
#include <sstream>

namespace ssd {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 8;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    template <typename T>
    void raw(const T& x) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&x);
        buf_.append(p, sizeof(T));
    }
    void u32(std::uint32_t x) { raw(x); }
    void u64(std::uint64_t x) { raw(x); }
    void i64(std::int64_t x) { raw(x); }
    void f64(double x) { raw(x); }
    void str(const std::string& s) {
        u64(s.size());
        buf_.append(s);
    }
    void strings(const std::vector<std::string>& v) {
        u64(v.size());
        for (const auto& s : v) str(s);
    }
    void matrix(const Matrix& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        buf_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : buf_(bytes) {}

    template <typename T>
    T raw() {
        need(sizeof(T));
        T x;
        std::memcpy(&x, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return x;
    }
    std::uint32_t u32() { return raw<std::uint32_t>(); }
    std::uint64_t u64() { return raw<std::uint64_t>(); }
    std::int64_t i64() { return raw<std::int64_t>(); }
    double f64() { return raw<double>(); }
    int i32() { return static_cast<int>(raw<std::int64_t>()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<std::string> strings() {
        const std::uint64_t n = u64();
        std::vector<std::string> v;
        for (std::uint64_t i = 0; i < n; ++i) v.push_back(str());
        return v;
    }
    Matrix matrix() {
        const std::uint64_t r = u64();
        const std::uint64_t c = u64();
        if (c != 0 && r > (buf_.size() - pos_) / c) throw IntegrityError("checkpoint: matrix exceeds payload");
        const std::uint64_t bytes = r * c * sizeof(double);
        need(bytes);
        Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        std::memcpy(m.data(), buf_.data() + pos_, bytes);
        pos_ += bytes;
        return m;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > buf_.size() - pos_) throw IntegrityError("checkpoint: payload truncated");
    }

    const std::string& buf_;
    std::size_t pos_ = 0;
};

void write_training(Writer& w, const TrainingConfig& c) {
    w.str(to_string(c.mode));
    w.i64(c.k_p);
    w.i64(c.k_m);
    w.i64(c.k_i);
    w.i64(c.baseline_steps);
    w.f64(c.learning_rate);
    w.f64(c.beta1);
    w.f64(c.beta2);
    w.f64(c.epsilon);
    w.f64(c.clip_norm);
    w.str(c.optimizer);
    w.i64(c.batch_size);
    w.f64(c.dropout);
    w.f64(c.lambda_r);
    w.f64(c.lambda_d);
    w.f64(c.lambda_mi);
    w.str(to_string(c.mi_target));
    w.u64(c.seed);
}

TrainingConfig read_training(Reader& r) {
    TrainingConfig c;
    c.mode = parse_train_mode(r.str());
    c.k_p = r.i32();
    c.k_m = r.i32();
    c.k_i = r.i32();
    c.baseline_steps = r.i32();
    c.learning_rate = r.f64();
    c.beta1 = r.f64();
    c.beta2 = r.f64();
    c.epsilon = r.f64();
    c.clip_norm = r.f64();
    c.optimizer = r.str();
    c.batch_size = r.i32();
    c.dropout = r.f64();
    c.lambda_r = r.f64();
    c.lambda_d = r.f64();
    c.lambda_mi = r.f64();
    c.mi_target = parse_mi_target(r.str());
    c.seed = r.u64();
    return c;
}

void write_model_config(Writer& w, const ModelConfig& c) {
    w.i64(c.embedder.word_dim);
    w.i64(c.embedder.char_dim);
    w.i64(c.embedder.char_filters);
    w.i64(c.embedder.char_window);
    w.i64(c.encoder.hidden);
    w.i64(c.encoder.heads);
    w.i64(c.encoder.head_dim);
    w.i64(c.decoder_hidden);
    w.i64(c.critic_hidden);
    w.f64(c.ema_decay);
}

ModelConfig read_model_config(Reader& r) {
    ModelConfig c;
    c.embedder.word_dim = r.i32();
    c.embedder.char_dim = r.i32();
    c.embedder.char_filters = r.i32();
    c.embedder.char_window = r.i32();
    c.encoder.hidden = r.i32();
    c.encoder.heads = r.i32();
    c.encoder.head_dim = r.i32();
    c.decoder_hidden = r.i32();
    c.critic_hidden = r.i32();
    c.ema_decay = r.f64();
    return c;
}

std::vector<MiCritic*> critic_list(Model& m) { return {&m.critics.e, &m.critics.z, &m.critics.v}; }

}  // namespace

std::uint64_t model_checksum(Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : model.all_parameters()) h = checksum(p->value, h);
    return h;
}

CheckpointData capture(Trainer& trainer, const std::string& config_text) {
    CheckpointData d;
    d.config_text = config_text;
    d.training = trainer.config();
    d.model = trainer.model();
    d.slots = trainer.optimizer().slots();
    d.state = trainer.state();
    return d;
}

void resume(Trainer& trainer, const CheckpointData& data) {
    trainer.optimizer().slots() = data.slots;
    trainer.restore(data.state);
}

void write_checkpoint(std::ostream& out, const CheckpointData& data) {
    // groups() only hands out parameter addresses
    Model& model = const_cast<Model&>(data.model);
    Writer w;
    w.str(data.config_text);
    write_training(w, data.training);
    write_model_config(w, model.config);
    w.u32(model.architecture == Architecture::Disentangled ? 0 : 1);
    w.strings(model.vocab.words());
    w.strings(model.vocab.chars());
    w.str(model.source_scheme.domain_name());
    w.strings(model.source_scheme.entity_types());
    w.str(model.target_scheme.domain_name());
    w.strings(model.target_scheme.entity_types());

    const auto params = model.all_parameters();
    w.u64(params.size());
    for (const auto* p : params) {
        w.str(p->name);
        w.matrix(p->value);
    }
    if (model.disentangled()) {
        for (const auto* c : critic_list(model)) {
            w.f64(c->log_ema);
            w.u32(c->ema_initialized ? 1 : 0);
        }
    }
    w.u64(data.slots.size());
    for (const auto& [name, slot] : data.slots) {
        w.str(name);
        w.matrix(slot.m);
        w.matrix(slot.v);
        w.i64(slot.t);
    }
    const TrainerState& s = data.state;
    w.u32(static_cast<std::uint32_t>(s.position.phase));
    w.i64(s.position.outer);
    w.i64(s.position.index);
    w.i64(s.global_step);
    w.u64(s.source_stream.epoch);
    w.u64(s.source_stream.cursor);
    w.u64(s.target_stream.epoch);
    w.u64(s.target_stream.cursor);

    const std::string& payload = w.bytes();
    Writer header;
    for (char c : kMagic) header.raw(c);
    header.u32(kCheckpointVersion);
    header.u64(payload.size());
    header.u64(fnv1a(payload));
    out.write(header.bytes().data(), static_cast<std::streamsize>(header.bytes().size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

CheckpointData read_checkpoint(std::istream& in) {
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw IntegrityError("checkpoint: bad magic header");
    }
    if (bytes.size() < kHeaderSize) throw IntegrityError("checkpoint: header truncated");
    Reader header(bytes);
    for (int i = 0; i < 8; ++i) header.raw<char>();
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion) {
        throw IncompatibleCheckpoint("checkpoint format version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    }
    const std::uint64_t size = header.u64();
    const std::uint64_t hash = header.u64();
    if (bytes.size() - kHeaderSize != size) throw IntegrityError("checkpoint: payload truncated");
    const std::string payload = bytes.substr(kHeaderSize);
    if (fnv1a(payload) != hash) throw IntegrityError("checkpoint: payload hash mismatch");

    Reader r(payload);
    CheckpointData d;
    d.config_text = r.str();
    d.training = read_training(r);
    const ModelConfig mc = read_model_config(r);
    const Architecture arch = r.u32() == 0 ? Architecture::Disentangled : Architecture::Shared;
    auto words = r.strings();
    auto chars = r.strings();
    const std::string source_name = r.str();
    const auto source_types = r.strings();
    const std::string target_name = r.str();
    const auto target_types = r.strings();
    d.model = Model(mc, arch, Vocabulary::from_lists(std::move(words), std::move(chars)),
                    LabelScheme(source_name, source_types), LabelScheme(target_name, target_types), 0);

    std::map<std::string, ad::Parameter*> by_name;
    for (auto* p : d.model.all_parameters()) by_name[p->name] = p;
    const std::uint64_t n = r.u64();
    if (n != by_name.size()) throw IntegrityError("checkpoint: parameter count does not match the architecture");
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        Matrix value = r.matrix();
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IntegrityError("checkpoint: unknown parameter " + name);
        if (value.rows() != it->second->value.rows() || value.cols() != it->second->value.cols()) {
            throw IntegrityError("checkpoint: shape mismatch for " + name);
        }
        it->second->value = std::move(value);
        it->second->grad.setZero();
    }
    if (d.model.disentangled()) {
        for (auto* c : critic_list(d.model)) {
            c->log_ema = r.f64();
            c->ema_initialized = r.u32() != 0;
        }
    }
    const std::uint64_t slots = r.u64();
    for (std::uint64_t i = 0; i < slots; ++i) {
        const std::string name = r.str();
        Adam::Slot s;
        s.m = r.matrix();
        s.v = r.matrix();
        s.t = r.i64();
        d.slots[name] = std::move(s);
    }
    TrainerState& s = d.state;
    const std::uint32_t phase = r.u32();
    if (phase > static_cast<std::uint32_t>(Phase::Done)) throw IntegrityError("checkpoint: unknown phase");
    s.position.phase = static_cast<Phase>(phase);
    s.position.outer = r.i32();
    s.position.index = r.i32();
    s.global_step = r.i64();
    s.source_stream.epoch = r.u64();
    s.source_stream.cursor = r.u64();
    s.target_stream.epoch = r.u64();
    s.target_stream.cursor = r.u64();
    if (!r.at_end()) throw IntegrityError("checkpoint: trailing bytes");
    return d;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ostringstream out;
    write_checkpoint(out, data);
    write_file_atomic(path, out.str());
}

CheckpointData load_checkpoint(const std::string& path) {
    std::istringstream in(read_file(path));
    return read_checkpoint(in);
}

}  // namespace ssd
