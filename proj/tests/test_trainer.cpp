#include "oracles.hpp"

#include "ssd/trainer.hpp"

#include <catch_amalgamated.hpp>

#include <numeric>
#include <sstream>

using namespace ssd;

namespace {

TrainingConfig small_config(TrainMode mode, int k_p = 3, int k_m = 2, int k_i = 2) {
    TrainingConfig c;
    c.mode = mode;
    c.k_p = k_p;
    c.k_m = k_m;
    c.k_i = k_i;
    c.batch_size = 8;
    c.seed = 5;
    return c;
}

Model make_model(const oracle::ToyData& toy, TrainMode mode) {
    return Model(oracle::tiny_model_config(), mode == TrainMode::Ssd ? Architecture::Disentangled : Architecture::Shared,
                 toy.vocab, toy.source.scheme, toy.target.scheme, 9);
}

std::map<Role, std::uint64_t> role_checksums(Model& m) {
    std::map<Role, std::uint64_t> out;
    for (auto role : {Role::Tagger, Role::Decoder, Role::DomainPredictor, Role::Critic}) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto* p : m.parameters(role)) h = checksum(p->value, h);
        out[role] = h;
    }
    return out;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t n) {
    return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(from + n), 0.0) /
           static_cast<double>(n);
}

}  // namespace

TEST_CASE("configuration bounds", "[trainer]") {
    TrainingConfig c;
    c.k_i = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.k_m = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.optimizer = "sgd";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    CHECK(c.effective_baseline_steps() == 200 * 11);
    CHECK(parse_train_mode("init_tuning") == TrainMode::InitTuning);
    CHECK_THROWS_AS(parse_train_mode("joint"), std::invalid_argument);
}

TEST_CASE("one pretraining step updates the tagger and domain predictor once", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::Ssd);
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, small_config(TrainMode::Ssd, 1));
    const auto before = role_checksums(m);
    tr.step();
    const auto after = role_checksums(m);
    CHECK(tr.position().phase == Phase::Critic);
    CHECK(after.at(Role::Tagger) != before.at(Role::Tagger));
    CHECK(after.at(Role::DomainPredictor) != before.at(Role::DomainPredictor));
    CHECK(after.at(Role::Critic) == before.at(Role::Critic));
    CHECK(after.at(Role::Decoder) == before.at(Role::Decoder));
    for (const auto* p : m.parameters(Role::Tagger)) CHECK(tr.optimizer().slots().at(p->name).t == 1);
    for (const auto* p : m.parameters(Role::DomainPredictor)) CHECK(tr.optimizer().slots().at(p->name).t == 1);
    for (const auto* p : m.parameters(Role::Critic)) CHECK(tr.optimizer().slots().count(p->name) == 0);
}

TEST_CASE("each phase only moves its own parameter groups", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::Ssd);
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, small_config(TrainMode::Ssd, 3, 2, 3));
    int violations = 0;
    std::map<Phase, int> steps;
    while (!tr.done()) {
        const Phase phase = tr.position().phase;
        const auto before = role_checksums(m);
        tr.step();
        const auto after = role_checksums(m);
        ++steps[phase];
        for (const auto& [role, sum] : before) {
            const bool changed = after.at(role) != sum;
            bool allowed = false;
            if (phase == Phase::Pretrain) allowed = role == Role::Tagger || role == Role::DomainPredictor;
            if (phase == Phase::Critic) allowed = role == Role::Critic;
            if (phase == Phase::Model) allowed = role != Role::Critic;
            if (changed && !allowed) ++violations;
        }
    }
    CHECK(violations == 0);
    CHECK(steps[Phase::Pretrain] == 3);
    CHECK(steps[Phase::Critic] == 6);
    CHECK(steps[Phase::Model] == 9);
    CHECK(tr.global_step() == 18);
    CHECK_THROWS_AS(tr.step(), std::logic_error);
}

TEST_CASE("pretraining reduces the tagging loss on a toy corpus", "[trainer]") {
    const auto toy = oracle::toy_data(50, 50);
    Model m = make_model(toy, TrainMode::Ssd);
    TrainingConfig c = small_config(TrainMode::Ssd, 200, 1, 1);
    c.learning_rate = 0.01;
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, c);
    tr.pretrain();
    const auto ly = tr.metrics().series("L_y", "pretrain");
    REQUIRE(ly.size() == 200);
    CHECK(mean(ly, 190, 10) < mean(ly, 0, 10));
}

TEST_CASE("in_domain never reads the source corpus", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::InDomain);
    TrainingConfig c = small_config(TrainMode::InDomain);
    c.baseline_steps = 5;
    Trainer tr(m, nullptr, &toy.target_encoded, c);
    const auto src_before = checksum(m.head_source.emission.weight.value);
    tr.run();
    CHECK(tr.source_reads() == 0);
    CHECK(tr.global_step() == 5);
    CHECK(checksum(m.head_source.emission.weight.value) == src_before);

    Model m2 = make_model(toy, TrainMode::InDomain);
    Trainer with_source(m2, &toy.source_encoded, &toy.target_encoded, c);
    with_source.run();
    CHECK(with_source.source_reads() == 0);
}

TEST_CASE("multi trains both heads every step", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::Multi);
    TrainingConfig c = small_config(TrainMode::Multi);
    c.baseline_steps = 4;
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, c);
    tr.run();
    CHECK(tr.source_reads() == 4);
    CHECK(tr.optimizer().slots().at("crf_source.transitions").t == 4);
    CHECK(tr.optimizer().slots().at("crf_target.transitions").t == 4);
}

TEST_CASE("init_tuning re-initializes and then trains the target head", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::InitTuning);
    TrainingConfig c = small_config(TrainMode::InitTuning);
    c.baseline_steps = 3;
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, c);
    tr.run_phase();
    CHECK(tr.position().phase == Phase::Target);
    CHECK(tr.source_reads() == 3);
    CHECK(tr.optimizer().slots().count("crf_target.transitions") == 0);
    tr.step();
    Model fresh = m;
    fresh.reset_head(kTargetDomain, Rng::derive(c.seed, 0x5eed0003));
    CHECK(m.head_target.emission.weight.value != fresh.head_target.emission.weight.value);
    CHECK(tr.optimizer().slots().at("crf_target.emission.weight").t == 1);
    tr.run();
    CHECK(tr.source_reads() == 3);
}

TEST_CASE("identical seeds give identical metric streams", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    const auto run = [&] {
        Model m = make_model(toy, TrainMode::Ssd);
        Trainer tr(m, &toy.source_encoded, &toy.target_encoded, small_config(TrainMode::Ssd));
        tr.run();
        std::vector<std::tuple<std::int64_t, std::string, std::string, double>> out;
        for (const auto& r : tr.metrics().records()) out.emplace_back(r.step, r.phase, r.loss_name, r.value);
        return out;
    };
    const auto a = run();
    CHECK(!a.empty());
    CHECK(a == run());
}

TEST_CASE("metrics round-trip through NDJSON", "[trainer]") {
    RunMetrics m;
    m.append({3, "model", "L_y", 0.125, 4.5});
    m.append({4, "critic", "l_e", -1e-3, 5.0});
    std::stringstream s;
    m.write_ndjson(s);
    const RunMetrics back = RunMetrics::read_ndjson(s);
    REQUIRE(back.size() == 2);
    CHECK(back.records()[1].loss_name == "l_e");
    CHECK(back.records()[0].value == 0.125);
    CHECK(back.series("L_y") == std::vector<double>{0.125});
}

TEST_CASE("step hook fires on its period", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::Ssd);
    Trainer tr(m, &toy.source_encoded, &toy.target_encoded, small_config(TrainMode::Ssd));
    std::vector<std::int64_t> seen;
    tr.set_step_hook(4, [&](Trainer& t) { seen.push_back(t.global_step()); });
    tr.run();
    CHECK(seen == std::vector<std::int64_t>{4, 8, 12});
}

TEST_CASE("fresh-critic MI estimates are finite and leave the model alone", "[trainer]") {
    const auto toy = oracle::toy_data(16, 8);
    Model m = make_model(toy, TrainMode::Ssd);
    const auto before = role_checksums(m);
    const MiReport r = estimate_mutual_information(m, {&toy.source_encoded, &toy.target_encoded}, 20, 8, 3);
    CHECK(std::isfinite(r.mi_zv));
    CHECK(std::isfinite(r.mi_wz));
    CHECK(std::isfinite(r.mi_wv));
    CHECK(role_checksums(m) == before);
    const MiReport again = estimate_mutual_information(m, {&toy.source_encoded, &toy.target_encoded}, 20, 8, 3);
    CHECK(again.mi_zv == r.mi_zv);
}
