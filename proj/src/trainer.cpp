#include "ssd/trainer.hpp"

#include "json.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace ssd {

namespace {

// Purposes mixed into the per-step seed.
enum : std::uint64_t { kDropoutSource = 1, kDropoutTarget = 2, kCriticShuffle = 3, kRegularizerShuffle = 4 };

constexpr std::uint64_t kSourceStreamSalt = 0x5eed0001;
constexpr std::uint64_t kTargetStreamSalt = 0x5eed0002;
constexpr std::uint64_t kHeadResetSalt = 0x5eed0003;


/// Tagger parameters minus the head of the domain that takes no part in a step.
std::vector<ad::Parameter*> tagger_without_head(Model& model, int unused_domain) {
    std::vector<ad::Parameter*> out;
    const std::string skip = unused_domain == kSourceDomain ? "crf_source" : "crf_target";
    for (auto& g : model.groups()) {
        if (g.role != Role::Tagger || g.name == skip) continue;
        out.insert(out.end(), g.params.begin(), g.params.end());
    }
    return out;
}

void check_finite(double value, const char* name) {
    if (!std::isfinite(value)) throw std::runtime_error(std::string("non-finite loss: ") + name);
}

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Ssd: return "ssd";
        case TrainMode::InDomain: return "in_domain";
        case TrainMode::InitTuning: return "init_tuning";
        case TrainMode::Multi: return "multi";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "ssd") return TrainMode::Ssd;
    if (text == "in_domain") return TrainMode::InDomain;
    if (text == "init_tuning") return TrainMode::InitTuning;
    if (text == "multi") return TrainMode::Multi;
    throw std::invalid_argument("unknown training mode: " + text);
}

std::string to_string(MiTarget target) { return target == MiTarget::Original ? "original" : "reconstructed"; }

MiTarget parse_mi_target(const std::string& text) {
    if (text == "original") return MiTarget::Original;
    if (text == "reconstructed") return MiTarget::Reconstructed;
    throw std::invalid_argument("unknown mi_target: " + text);
}

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::Pretrain: return "pretrain";
        case Phase::Critic: return "critic";
        case Phase::Model: return "model";
        case Phase::Joint: return "joint";
        case Phase::Source: return "source";
        case Phase::Target: return "target";
        case Phase::Done: return "done";
    }
    return "?";
}

void TrainingConfig::validate() const {
    if (k_p < 1) throw std::invalid_argument("K_p must be >= 1");
    if (k_m < 1) throw std::invalid_argument("K_m must be >= 1");
    if (k_i < 1) throw std::invalid_argument("K_i must be >= 1");
    if (baseline_steps < 0) throw std::invalid_argument("baseline_steps must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (lambda_r < 0.0 || lambda_d < 0.0 || lambda_mi < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (optimizer != "adam") throw std::invalid_argument("unsupported optimizer: " + optimizer);
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw std::invalid_argument("invalid Adam parameters");
    }
}

std::vector<double> RunMetrics::series(const std::string& loss_name, const std::string& phase) const {
    std::vector<double> out;
    for (const auto& r : records_) {
        if (r.loss_name == loss_name && (phase.empty() || r.phase == phase)) out.push_back(r.value);
    }
    return out;
}

std::string RunMetrics::to_json_line(const MetricRecord& r) {
    nlohmann::json j = {{"step", r.step}, {"phase", r.phase}, {"loss_name", r.loss_name}, {"value", r.value},
                        {"wall_ms", r.wall_ms}};
    return j.dump();
}

void RunMetrics::write_ndjson(std::ostream& out) const {
    for (const auto& r : records_) out << to_json_line(r) << '\n';
}

RunMetrics RunMetrics::read_ndjson(std::istream& in) {
    RunMetrics m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        m.append({j.at("step").get<std::int64_t>(), j.at("phase").get<std::string>(),
                  j.at("loss_name").get<std::string>(), j.at("value").get<double>(), j.at("wall_ms").get<double>()});
    }
    return m;
}

Trainer::Trainer(Model& model, const EncodedCorpus* source, const EncodedCorpus* target, TrainingConfig config)
    : model_(model), source_(source), target_(target), config_(std::move(config)), adam_(config_.adam()),
      start_(std::chrono::steady_clock::now()) {
    config_.validate();
    const bool needs_source = config_.mode != TrainMode::InDomain;
    if (target_ == nullptr || target_->empty()) throw std::invalid_argument("training needs a target corpus");
    if (needs_source && (source_ == nullptr || source_->empty())) {
        throw std::invalid_argument("mode " + to_string(config_.mode) + " needs a source corpus");
    }
    if ((config_.mode == TrainMode::Ssd) != model_.disentangled()) {
        throw std::invalid_argument("mode " + to_string(config_.mode) + " does not match the model architecture");
    }
    if (needs_source) {
        source_stream_ = BatchStream(source_, config_.batch_size, Rng::derive(config_.seed, kSourceStreamSalt));
    }
    target_stream_ = BatchStream(target_, config_.batch_size, Rng::derive(config_.seed, kTargetStreamSalt));

    switch (config_.mode) {
        case TrainMode::Ssd: state_.position = {Phase::Pretrain, 0, 0}; break;
        case TrainMode::InDomain: state_.position = {Phase::Target, 0, 0}; break;
        case TrainMode::InitTuning: state_.position = {Phase::Source, 0, 0}; break;
        case TrainMode::Multi: state_.position = {Phase::Joint, 0, 0}; break;
    }
}

std::uint64_t Trainer::step_seed(std::uint64_t purpose) const {
    return Rng::derive(Rng::derive(config_.seed, static_cast<std::uint64_t>(state_.global_step)), purpose);
}

void Trainer::record(const std::string& name, double value) {
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    metrics_.append({state_.global_step, to_string(state_.position.phase), name, value, ms});
}

void Trainer::step() {
    switch (state_.position.phase) {
        case Phase::Pretrain: pretrain_step(); break;
        case Phase::Critic: critic_step(); break;
        case Phase::Model: model_step(); break;
        case Phase::Joint: baseline_step(true, true); break;
        case Phase::Source: baseline_step(true, false); break;
        case Phase::Target:
            if (config_.mode == TrainMode::InitTuning && state_.position.index == 0) {
                model_.reset_head(kTargetDomain, Rng::derive(config_.seed, kHeadResetSalt));
                for (auto* p : model_.head_target.parameters()) adam_.reset(p->name);
            }
            baseline_step(false, true);
            break;
        case Phase::Done: throw std::logic_error("training already finished");
    }
    ++state_.global_step;
    advance_position();
    if (hook_ && hook_every_ > 0 && state_.global_step % hook_every_ == 0) hook_(*this);
}

void Trainer::advance_position() {
    SchedulePosition& p = state_.position;
    ++p.index;
    switch (p.phase) {
        case Phase::Pretrain:
            if (p.index == config_.k_p) p = {Phase::Critic, 0, 0};
            break;
        case Phase::Critic:
            if (p.index == config_.k_m) p = {Phase::Model, p.outer, 0};
            break;
        case Phase::Model:
            if (p.index == config_.k_p) {
                p = p.outer + 1 == config_.k_i ? SchedulePosition{Phase::Done, p.outer + 1, 0}
                                               : SchedulePosition{Phase::Critic, p.outer + 1, 0};
            }
            break;
        case Phase::Joint:
        case Phase::Target:
            if (p.index == config_.effective_baseline_steps()) p = {Phase::Done, 0, 0};
            break;
        case Phase::Source:
            if (p.index == config_.effective_baseline_steps()) p = {Phase::Target, 0, 0};
            break;
        case Phase::Done: break;
    }
}

void Trainer::run_phase() {
    const Phase current = state_.position.phase;
    while (!done() && state_.position.phase == current) step();
}

void Trainer::run() {
    while (!done()) step();
}

void Trainer::pretrain() {
    if (config_.mode != TrainMode::Ssd) throw std::logic_error("pretrain: only the disentangled schedule pretrains");
    while (state_.position.phase == Phase::Pretrain) step();
}

void Trainer::iterate() {
    if (config_.mode != TrainMode::Ssd || state_.position.phase == Phase::Pretrain) {
        throw std::logic_error("iterate: pretraining has not finished");
    }
    run();
}

void Trainer::pretrain_step() {
    const Batch s = source_stream_.next();
    const Batch t = target_stream_.next();
    ad::Tape tape;
    const Encoded es = encode_batch(tape, model_, s, true, config_.dropout, step_seed(kDropoutSource));
    const Encoded et = encode_batch(tape, model_, t, true, config_.dropout, step_seed(kDropoutTarget));
    ad::Var ly = ad::add(tagging_loss(tape, es.rep, s, model_.head_source, true),
                         tagging_loss(tape, et.rep, t, model_.head_target, true));
    // θ_d alone learns from L_d here: z is cut off from the domain loss
    ad::Var ld = ad::scale(
        ad::add(domain_loss(tape, ad::detach(es.z), s.segments(), s.domain_ids, model_.domain_predictor, true),
                domain_loss(tape, ad::detach(et.z), t.segments(), t.domain_ids, model_.domain_predictor, true)),
        0.5);
    check_finite(ly.scalar(), "L_y");
    check_finite(ld.scalar(), "L_d");
    const auto theta = model_.parameters(Role::Tagger);
    const auto theta_d = model_.parameters(Role::DomainPredictor);
    zero_grads(model_.all_parameters());
    tape.backward(ad::add(ly, ld));
    adam_.step(theta);
    adam_.step(theta_d);
    record("L_y", ly.scalar());
    record("L_d", ld.scalar());
}

void Trainer::critic_step() {
    LatentSamples ls = collect_latents(model_, source_stream_.next(), config_.mi_target);
    LatentSamples lt = collect_latents(model_, target_stream_.next(), config_.mi_target);
    LatentSamples both;
    both.z.resize(ls.z.rows() + lt.z.rows(), ls.z.cols());
    both.v.resize(ls.v.rows() + lt.v.rows(), ls.v.cols());
    both.w.resize(ls.w.rows() + lt.w.rows(), ls.w.cols());
    both.z << ls.z, lt.z;
    both.v << ls.v, lt.v;
    both.w << ls.w, lt.w;
    zero_grads(model_.all_parameters());
    const CriticStepResult r = ssd::critic_step(model_.critics, both, adam_, step_seed(kCriticShuffle));
    record("l_e", r.e.value);
    record("l_z", r.z.value);
    record("l_v", r.v.value);
}

void Trainer::model_step() {
    const Batch s = source_stream_.next();
    const Batch t = target_stream_.next();
    ad::Tape tape;
    const Encoded es = encode_batch(tape, model_, s, true, config_.dropout, step_seed(kDropoutSource));
    const Encoded et = encode_batch(tape, model_, t, true, config_.dropout, step_seed(kDropoutTarget));
    ad::Var ly = ad::add(tagging_loss(tape, es.rep, s, model_.head_source, true),
                         tagging_loss(tape, et.rep, t, model_.head_target, true));

    // reconstruction of the pre-dropout embedding, which is a fixed target
    ad::Var rs = model_.decoder.apply(tape, es.rep, true);
    ad::Var rt = model_.decoder.apply(tape, et.rep, true);
    ad::Var lr = ad::scale(ad::add(ad::masked_mse(rs, es.embeddings.value(), s.mask),
                                   ad::masked_mse(rt, et.embeddings.value(), t.mask)),
                           0.5);

    ad::Var ld = ad::scale(ad::add(domain_loss(tape, es.z, s.segments(), s.domain_ids, model_.domain_predictor, true),
                                   domain_loss(tape, et.z, t.segments(), t.domain_ids, model_.domain_predictor, true)),
                           0.5);

    const IntVector rows_s = token_rows(s);
    const IntVector rows_t = token_rows(t);
    ad::Var z = ad::concat_rows({ad::select_rows(es.z, rows_s), ad::select_rows(et.z, rows_t)});
    ad::Var v = ad::concat_rows({ad::select_rows(es.v, rows_s), ad::select_rows(et.v, rows_t)});
    ad::Var w = config_.mi_target == MiTarget::Original
                    ? ad::detach(ad::concat_rows({ad::select_rows(es.embeddings, rows_s),
                                                  ad::select_rows(et.embeddings, rows_t)}))
                    : ad::concat_rows({ad::select_rows(rs, rows_s), ad::select_rows(rt, rows_t)});
    const RegularizerTerms reg = encoder_mi_regularizer(tape, model_.critics, z, v, w, step_seed(kRegularizerShuffle));
    // A frozen critic's I(z; v) estimate can be driven far below zero by
    // moving the latents; MI is non-negative, so only positive values push.
    ad::Var penalty = ad::weighted_sum({{ad::relu(reg.zv), 1.0}, {reg.wz, -1.0}, {reg.wv, -1.0}});

    ad::Var total = ad::weighted_sum(
        {{ly, 1.0}, {lr, config_.lambda_r}, {ld, config_.lambda_d}, {penalty, config_.lambda_mi}});
    check_finite(total.scalar(), "total");
    zero_grads(model_.all_parameters());
    tape.backward(total);
    adam_.step(model_.parameters(Role::Tagger));
    adam_.step(model_.parameters(Role::Decoder));
    adam_.step(model_.parameters(Role::DomainPredictor));
    record("L_y", ly.scalar());
    record("L_r", lr.scalar());
    record("L_d", ld.scalar());
    record("regularizer", reg.value.scalar());
    record("penalty", penalty.scalar());
    record("mi_zv", reg.mi_zv);
    record("mi_wz", reg.mi_wz);
    record("mi_wv", reg.mi_wv);
}

void Trainer::baseline_step(bool use_source, bool use_target) {
    ad::Tape tape;
    std::vector<std::pair<ad::Var, double>> terms;
    if (use_source) {
        const Batch s = source_stream_.next();
        const Encoded es = encode_batch(tape, model_, s, true, config_.dropout, step_seed(kDropoutSource));
        terms.push_back({tagging_loss(tape, es.rep, s, model_.head_source, true), 1.0});
    }
    if (use_target) {
        const Batch t = target_stream_.next();
        const Encoded et = encode_batch(tape, model_, t, true, config_.dropout, step_seed(kDropoutTarget));
        terms.push_back({tagging_loss(tape, et.rep, t, model_.head_target, true), 1.0});
    }
    ad::Var ly = ad::weighted_sum(terms);
    check_finite(ly.scalar(), "L_y");
    zero_grads(model_.all_parameters());
    tape.backward(ly);
    if (use_source && use_target) {
        adam_.step(model_.parameters(Role::Tagger));
    } else {
        adam_.step(tagger_without_head(model_, use_source ? kTargetDomain : kSourceDomain));
    }
    record("L_y", ly.scalar());
}

TrainerState Trainer::state() const {
    TrainerState s = state_;
    s.source_stream = {source_stream_.epoch(), source_stream_.cursor()};
    s.target_stream = {target_stream_.epoch(), target_stream_.cursor()};
    return s;
}

void Trainer::restore(const TrainerState& state) {
    state_ = state;
    if (source_ != nullptr && config_.mode != TrainMode::InDomain) {
        source_stream_.seek(state.source_stream.epoch, state.source_stream.cursor);
    }
    target_stream_.seek(state.target_stream.epoch, state.target_stream.cursor);
}

void Trainer::set_step_hook(int every, std::function<void(Trainer&)> hook) {
    hook_every_ = every;
    hook_ = std::move(hook);
}

MiReport estimate_mutual_information(Model& model, const std::vector<const EncodedCorpus*>& corpora, int steps,
                                     int batch_size, std::uint64_t seed, MiTarget target) {
    if (!model.disentangled()) throw std::invalid_argument("estimate_mutual_information: model has no latent pair");
    std::vector<LatentSamples> pool;
    for (const auto* c : corpora) {
        if (c == nullptr || c->empty()) continue;
        for (const Batch& b : make_batches(*c, batch_size, seed)) pool.push_back(collect_latents(model, b, target));
    }
    if (pool.empty()) throw std::invalid_argument("estimate_mutual_information: no sentences");

    Rng rng(seed);
    const int d = model.latent_dim();
    const int w_dim = model.embedder.output_dim();
    CriticSet critics;
    critics.e = MiCritic("probe_e", d, d, model.config.critic_hidden, rng, model.config.ema_decay);
    critics.z = MiCritic("probe_z", w_dim, d, model.config.critic_hidden, rng, model.config.ema_decay);
    critics.v = MiCritic("probe_v", w_dim, d, model.config.critic_hidden, rng, model.config.ema_decay);
    Adam adam(AdamConfig{});
    std::size_t next = 0;
    const auto stream = [&]() { return pool[next++ % pool.size()]; };
    train_critics(critics, stream, steps, adam, Rng::derive(seed, 1));

    // final figures over every pooled token at once
    LatentSamples all;
    Eigen::Index n = 0;
    for (const auto& s : pool) n += s.z.rows();
    all.z.resize(n, d);
    all.v.resize(n, d);
    all.w.resize(n, w_dim);
    Eigen::Index r = 0;
    for (const auto& s : pool) {
        all.z.middleRows(r, s.z.rows()) = s.z;
        all.v.middleRows(r, s.v.rows()) = s.v;
        all.w.middleRows(r, s.w.rows()) = s.w;
        r += s.z.rows();
    }
    const auto shuffled = [&](const Matrix& a, const Matrix& b, std::uint64_t stream_id) {
        return shuffle_marginals(PairBatch{a, b}, Rng::derive(seed, stream_id));
    };
    MiReport out;
    out.mi_zv = mi_lower_bound(critics.e, {all.z, all.v}, shuffled(all.z, all.v, 2)).value;
    out.mi_wz = mi_lower_bound(critics.z, {all.w, all.z}, shuffled(all.w, all.z, 3)).value;
    out.mi_wv = mi_lower_bound(critics.v, {all.w, all.v}, shuffled(all.w, all.v, 4)).value;
    return out;
}

}  // namespace ssd
