#pragma once

// Training schedules: the alternating disentanglement schedule and the three
// baselines, driven one atomic step at a time so a run can stop, checkpoint
// and resume anywhere.
//
// Disentangled schedule: K_p pretraining steps, then K_i rounds of K_m critic
// steps followed by K_p model steps. Every step draws its randomness from
// (seed, global step), and batches come from seed-ordered streams, so the
// whole run is a function of the config and the corpora.

#include "ssd/model.hpp"
#include "ssd/optimizer.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ssd {

enum class TrainMode { Ssd, InDomain, InitTuning, Multi };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);
std::string to_string(MiTarget target);
MiTarget parse_mi_target(const std::string& text);

struct TrainingConfig {
    TrainMode mode = TrainMode::Ssd;
    int k_p = 200;
    int k_m = 50;
    int k_i = 10;
    /// Steps per baseline stage; 0 means K_p * (K_i + 1), the model-step count of a full disentangled run.
    int baseline_steps = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 5.0;
    std::string optimizer = "adam";
    int batch_size = 64;
    double dropout = 0.5;
    double lambda_r = 1.0;
    double lambda_d = 1.0;
    double lambda_mi = 1.0;
    MiTarget mi_target = MiTarget::Original;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument on the first violated bound.
    void validate() const;
    int effective_baseline_steps() const { return baseline_steps > 0 ? baseline_steps : k_p * (k_i + 1); }
    AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon, clip_norm}; }
};

struct MetricRecord {
    std::int64_t step = 0;
    std::string phase;
    std::string loss_name;
    double value = 0.0;
    double wall_ms = 0.0;
};

/// Append-only metric log, serialized as one JSON object per line.
class RunMetrics {
public:
    void append(MetricRecord record) { records_.push_back(std::move(record)); }
    const std::vector<MetricRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    /// Values of one loss name in step order.
    std::vector<double> series(const std::string& loss_name, const std::string& phase = "") const;

    static std::string to_json_line(const MetricRecord& r);
    void write_ndjson(std::ostream& out) const;
    static RunMetrics read_ndjson(std::istream& in);

private:
    std::vector<MetricRecord> records_;
};

enum class Phase { Pretrain, Critic, Model, Joint, Source, Target, Done };
std::string to_string(Phase phase);

struct SchedulePosition {
    Phase phase = Phase::Done;
    int outer = 0;  ///< round of the disentangled schedule
    int index = 0;  ///< step within the phase
};

struct StreamPosition {
    std::uint64_t epoch = 0;
    std::uint64_t cursor = 0;
};

/// Everything besides parameters and optimizer slots needed to resume.
struct TrainerState {
    SchedulePosition position;
    std::int64_t global_step = 0;
    StreamPosition source_stream;
    StreamPosition target_stream;
};

class Trainer {
public:
    /// `source` may be null for in_domain; the corpora must outlive the trainer.
    Trainer(Model& model, const EncodedCorpus* source, const EncodedCorpus* target, TrainingConfig config);

    const TrainingConfig& config() const { return config_; }
    Model& model() { return model_; }
    Adam& optimizer() { return adam_; }
    const Adam& optimizer() const { return adam_; }
    RunMetrics& metrics() { return metrics_; }
    const RunMetrics& metrics() const { return metrics_; }

    bool done() const { return state_.position.phase == Phase::Done; }
    const SchedulePosition& position() const { return state_.position; }
    std::int64_t global_step() const { return state_.global_step; }
    /// Number of batches drawn from the source corpus so far.
    std::size_t source_reads() const { return source_stream_.reads(); }

    /// One atomic step of the schedule. Throws std::logic_error when done.
    void step();
    /// Steps until the phase changes or the run is done.
    void run_phase();
    void run();
    /// Runs the remaining pretraining steps (disentangled mode only).
    void pretrain();
    /// Runs every remaining round; requires pretraining to be finished.
    void iterate();

    TrainerState state() const;
    /// Restores schedule position and stream positions (parameters and
    /// optimizer slots are restored separately).
    void restore(const TrainerState& state);

    /// Called after every step whose global step is a multiple of `every`.
    void set_step_hook(int every, std::function<void(Trainer&)> hook);

private:
    void pretrain_step();
    void critic_step();
    void model_step();
    void baseline_step(bool use_source, bool use_target);
    void advance_position();
    void record(const std::string& name, double value);
    std::uint64_t step_seed(std::uint64_t purpose) const;

    Model& model_;
    const EncodedCorpus* source_;
    const EncodedCorpus* target_;
    TrainingConfig config_;
    Adam adam_;
    RunMetrics metrics_;
    TrainerState state_;
    BatchStream source_stream_;
    BatchStream target_stream_;
    std::chrono::steady_clock::time_point start_;
    int hook_every_ = 0;
    std::function<void(Trainer&)> hook_;
};

/// Mutual-information estimates between latents and embeddings, each from a
/// fresh critic trained on frozen latents of the given corpora.
struct MiReport {
    double mi_zv = 0.0;
    double mi_wz = 0.0;
    double mi_wv = 0.0;
};
MiReport estimate_mutual_information(Model& model, const std::vector<const EncodedCorpus*>& corpora, int steps,
                                     int batch_size, std::uint64_t seed, MiTarget target = MiTarget::Original);

}  // namespace ssd
