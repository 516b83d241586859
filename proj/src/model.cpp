#include "ssd/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace ssd {

namespace {

constexpr int kInferenceChunk = 64;

std::string head_name(int domain) { return domain == kSourceDomain ? "crf_source" : "crf_target"; }

}  // namespace

Model::Model(const ModelConfig& cfg, Architecture arch, Vocabulary vocabulary, LabelScheme source,
             LabelScheme target, std::uint64_t seed)
    : config(cfg), architecture(arch), vocab(std::move(vocabulary)), source_scheme(std::move(source)),
      target_scheme(std::move(target)) {
    if (source_scheme.size() < 1 || target_scheme.size() < 1) throw std::invalid_argument("Model: empty label scheme");
    Rng rng(seed);
    embedder = Embedder(cfg.embedder, vocab.word_size(), vocab.char_size(), rng);
    const int w_dim = embedder.output_dim();
    encoder_z = Encoder(disentangled() ? "encoder_z" : "encoder", w_dim, cfg.encoder, rng);
    if (disentangled()) encoder_v = Encoder("encoder_v", w_dim, cfg.encoder, rng);
    head_source = CrfHead(head_name(kSourceDomain), rep_dim(), source_scheme.size(), rng);
    head_target = CrfHead(head_name(kTargetDomain), rep_dim(), target_scheme.size(), rng);
    if (disentangled()) {
        const int d = latent_dim();
        decoder = Decoder("decoder", 2 * d, cfg.decoder_hidden, w_dim, rng);
        domain_predictor = DomainPredictor("domain_predictor", d, rng);
        critics.e = MiCritic("critic_e", d, d, cfg.critic_hidden, rng, cfg.ema_decay);
        critics.z = MiCritic("critic_z", w_dim, d, cfg.critic_hidden, rng, cfg.ema_decay);
        critics.v = MiCritic("critic_v", w_dim, d, cfg.critic_hidden, rng, cfg.ema_decay);
    }
}

std::vector<ParameterGroup> Model::groups() {
    std::vector<ParameterGroup> g;
    g.push_back({"embedder", Role::Tagger, embedder.parameters()});
    if (disentangled()) {
        g.push_back({"encoder_z", Role::Tagger, encoder_z.parameters()});
        g.push_back({"encoder_v", Role::Tagger, encoder_v.parameters()});
    } else {
        g.push_back({"encoder", Role::Tagger, encoder_z.parameters()});
    }
    g.push_back({"crf_source", Role::Tagger, head_source.parameters()});
    g.push_back({"crf_target", Role::Tagger, head_target.parameters()});
    if (disentangled()) {
        g.push_back({"decoder", Role::Decoder, decoder.parameters()});
        g.push_back({"domain_predictor", Role::DomainPredictor, domain_predictor.parameters()});
        g.push_back({"critic_e", Role::Critic, critics.e.parameters()});
        g.push_back({"critic_z", Role::Critic, critics.z.parameters()});
        g.push_back({"critic_v", Role::Critic, critics.v.parameters()});
    }
    return g;
}

std::vector<ad::Parameter*> Model::parameters(Role role) {
    std::vector<ad::Parameter*> out;
    for (auto& group : groups()) {
        if (group.role != role) continue;
        out.insert(out.end(), group.params.begin(), group.params.end());
    }
    return out;
}

std::vector<ad::Parameter*> Model::all_parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& group : groups()) out.insert(out.end(), group.params.begin(), group.params.end());
    return out;
}

void Model::reset_head(int domain, std::uint64_t seed) {
    Rng rng(seed);
    const LabelScheme& scheme = domain == kSourceDomain ? source_scheme : target_scheme;
    head(domain) = CrfHead(head_name(domain), rep_dim(), scheme.size(), rng);
}

std::map<std::string, std::uint64_t> group_checksums(Model& model) {
    std::map<std::string, std::uint64_t> out;
    for (auto& group : model.groups()) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto* p : group.params) h = checksum(p->value, h);
        out[group.name] = h;
    }
    return out;
}

Encoded encode_batch(ad::Tape& tape, Model& model, const Batch& batch, bool trainable, double dropout_rate,
                     std::uint64_t seed) {
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("encode_batch: dropout outside [0, 1)");
    Encoded out;
    out.embeddings = embed_batch(tape, batch, model.embedder, trainable);
    ad::Var inputs = out.embeddings;
    if (dropout_rate > 0.0) {
        Rng rng(seed);
        const double keep = 1.0 - dropout_rate;
        const auto cols = out.embeddings.cols();
        Matrix mask = Matrix::Zero(batch.rows(), cols);
        for (int b = 0; b < batch.batch_size; ++b) {
            for (int i = 0; i < batch.lengths[static_cast<std::size_t>(b)]; ++i) {
                const int r = batch.row(b, i);
                for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
            }
        }
        inputs = ad::cmul_const(inputs, mask);
    }
    out.z = encode(tape, inputs, batch.lengths, batch.max_length, model.encoder_z, trainable);
    if (model.disentangled()) {
        out.v = encode(tape, inputs, batch.lengths, batch.max_length, model.encoder_v, trainable);
        out.rep = ad::concat_cols({out.z, out.v});
    } else {
        out.rep = out.z;
    }
    return out;
}

ad::Var tagging_loss(ad::Tape& tape, const ad::Var& rep, const Batch& batch, CrfHead& head, bool trainable) {
    if (batch.batch_size < 1) throw std::invalid_argument("tagging_loss: empty batch");
    ad::Var emissions = head.emission.apply(tape, rep, trainable);
    ad::Var nll = crf_nll_sum(emissions, use(tape, head.transitions, trainable), batch.label_ids, batch.lengths,
                              batch.max_length);
    return ad::scale(nll, 1.0 / batch.batch_size);
}

double joint_tagging_loss(Model& model, const Batch& source, const Batch& target) {
    if (source.batch_size < 1 || target.batch_size < 1) throw std::invalid_argument("joint_tagging_loss: empty batch");
    ad::Tape tape;
    const Encoded s = encode_batch(tape, model, source, false, 0.0, 0);
    const Encoded t = encode_batch(tape, model, target, false, 0.0, 0);
    return tagging_loss(tape, s.rep, source, model.head_source, false).scalar() +
           tagging_loss(tape, t.rep, target, model.head_target, false).scalar();
}

IntVector token_rows(const Batch& batch) {
    IntVector rows;
    rows.reserve(static_cast<std::size_t>(batch.token_count()));
    for (int b = 0; b < batch.batch_size; ++b) {
        for (int i = 0; i < batch.lengths[static_cast<std::size_t>(b)]; ++i) rows.push_back(batch.row(b, i));
    }
    return rows;
}

namespace {

template <typename Fn>
void for_each_chunk(const EncodedCorpus& corpus, Fn&& fn) {
    for (std::size_t start = 0; start < corpus.size(); start += kInferenceChunk) {
        const std::size_t end = std::min(corpus.size(), start + kInferenceChunk);
        std::vector<const EncodedSentence*> ptrs;
        for (std::size_t i = start; i < end; ++i) ptrs.push_back(&corpus.sentences[i]);
        fn(start, make_batch(ptrs));
    }
}

}  // namespace

std::vector<IntVector> predict(Model& model, const EncodedCorpus& corpus, int domain, bool constrained) {
    CrfHead& head = model.head(domain);
    const LabelScheme& scheme = domain == kSourceDomain ? model.source_scheme : model.target_scheme;
    const Matrix allowed = bio_allowed_transitions(scheme);
    std::vector<IntVector> out(corpus.size());
    for_each_chunk(corpus, [&](std::size_t start, const Batch& batch) {
        ad::Tape tape;
        const Encoded enc = encode_batch(tape, model, batch, false, 0.0, 0);
        const Matrix emissions = head.emission.apply(enc.rep.value());
        for (int b = 0; b < batch.batch_size; ++b) {
            const int len = batch.lengths[static_cast<std::size_t>(b)];
            auto& labels = out[start + static_cast<std::size_t>(b)];
            if (len == 0) continue;
            labels = viterbi(emissions.middleRows(batch.row(b, 0), len), head.transitions.value,
                             constrained ? &allowed : nullptr)
                         .label_ids;
        }
    });
    return out;
}

LatentSamples collect_latents(Model& model, const Batch& batch, MiTarget target) {
    if (!model.disentangled()) throw std::invalid_argument("collect_latents: model has no latent pair");
    ad::Tape tape;
    const Encoded enc = encode_batch(tape, model, batch, false, 0.0, 0);
    const IntVector rows = token_rows(batch);
    LatentSamples s;
    s.z = enc.z.value()(rows, Eigen::all);
    s.v = enc.v.value()(rows, Eigen::all);
    if (target == MiTarget::Original) {
        s.w = enc.embeddings.value()(rows, Eigen::all);
    } else {
        s.w = reconstruct(s.z, s.v, model.decoder);
    }
    return s;
}

Matrix pooled_latents(Model& model, const EncodedCorpus& corpus, bool use_v) {
    if (use_v && !model.disentangled()) throw std::invalid_argument("pooled_latents: model has no v");
    Matrix out(static_cast<Eigen::Index>(corpus.size()), model.latent_dim());
    for_each_chunk(corpus, [&](std::size_t start, const Batch& batch) {
        ad::Tape tape;
        const Encoded enc = encode_batch(tape, model, batch, false, 0.0, 0);
        const Matrix& h = use_v ? enc.v.value() : enc.z.value();
        for (int b = 0; b < batch.batch_size; ++b) {
            const int len = batch.lengths[static_cast<std::size_t>(b)];
            const auto r = static_cast<Eigen::Index>(start) + b;
            if (len == 0) {
                out.row(r).setZero();
                continue;
            }
            out.row(r) = h.middleRows(batch.row(b, 0), len).colwise().maxCoeff();
        }
    });
    return out;
}

}  // namespace ssd
