#include "ssd/evaluator.hpp"

#include "ssd/autodiff.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssd {

namespace {

using nlohmann::json;

void check_shapes(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold) {
    if (pred.size() != gold.size()) throw std::invalid_argument("entity_prf: sentence counts differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].size() != gold[i].size()) {
            throw std::invalid_argument("entity_prf: sentence " + std::to_string(i) + " lengths differ");
        }
    }
}

template <typename Keep>
EvalReport score(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold, Keep keep) {
    check_shapes(pred, gold);
    EvalReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        std::vector<EntitySpan> p = extract_entities(pred[i]);
        std::vector<EntitySpan> g = extract_entities(gold[i]);
        std::erase_if(p, [&](const EntitySpan& s) { return !keep(s.type); });
        std::erase_if(g, [&](const EntitySpan& s) { return !keep(s.type); });
        std::sort(p.begin(), p.end());
        std::sort(g.begin(), g.end());
        for (const auto& s : p) {
            ++r.counts.predicted;
            ++r.per_type[s.type].predicted;
        }
        for (const auto& s : g) {
            ++r.counts.gold;
            ++r.per_type[s.type].gold;
        }
        std::vector<EntitySpan> hits;
        std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(hits));
        for (const auto& s : hits) {
            ++r.counts.true_positives;
            ++r.per_type[s.type].true_positives;
        }
    }
    r.precision = r.counts.precision();
    r.recall = r.counts.recall();
    r.f1 = r.counts.f1();
    return r;
}

json counts_json(const SpanCounts& c) {
    return {{"true_positives", c.true_positives}, {"predicted", c.predicted}, {"gold", c.gold},
            {"precision", c.precision()}, {"recall", c.recall()}, {"f1", c.f1()}};
}

json to_json(const EvalReport& r) {
    json j = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"counts", counts_json(r.counts)}};
    json types = json::object();
    for (const auto& [type, c] : r.per_type) types[type] = counts_json(c);
    j["per_type"] = types;
    if (r.common) j["common"] = to_json(*r.common);
    if (r.non_common) j["non_common"] = to_json(*r.non_common);
    return j;
}

SpanCounts counts_from(const json& j) {
    return {j.at("true_positives").get<long long>(), j.at("predicted").get<long long>(), j.at("gold").get<long long>()};
}

EvalReport from_json(const json& j) {
    EvalReport r;
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.counts = counts_from(j.at("counts"));
    for (const auto& [type, c] : j.at("per_type").items()) r.per_type[type] = counts_from(c);
    if (j.contains("common")) r.common = std::make_shared<EvalReport>(from_json(j.at("common")));
    if (j.contains("non_common")) r.non_common = std::make_shared<EvalReport>(from_json(j.at("non_common")));
    return r;
}

}  // namespace

double SpanCounts::f1() const {
    const double p = precision();
    const double r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

std::vector<EntitySpan> extract_entities(const TagSequence& tags) {
    std::vector<EntitySpan> spans;
    std::optional<EntitySpan> open;
    const auto close = [&](int at) {
        if (open) {
            open->end = at;
            spans.push_back(*open);
            open.reset();
        }
    };
    for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
        const std::string& tag = tags[static_cast<std::size_t>(i)];
        if (tag == "O") {
            close(i);
            continue;
        }
        const auto parsed = LabelScheme::parse_tag(tag);
        const bool continues =
            parsed.prefix == LabelScheme::Prefix::Inside && open.has_value() && open->type == parsed.type;
        if (continues) continue;
        close(i);
        open = EntitySpan{parsed.type, i, i + 1};
    }
    close(static_cast<int>(tags.size()));
    return spans;
}

EvalReport entity_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold) {
    return score(pred, gold, [](const std::string&) { return true; });
}

EvalReport subset_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                      const std::set<std::string>& types) {
    if (types.empty()) throw std::invalid_argument("subset_prf: empty type subset");
    return score(pred, gold, [&](const std::string& t) { return types.count(t) > 0; });
}

EvalReport split_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                     const std::set<std::string>& common) {
    EvalReport all = entity_prf(pred, gold);
    all.common = std::make_shared<EvalReport>(subset_prf(pred, gold, common));
    std::set<std::string> others;
    for (const auto& [type, c] : all.per_type) {
        if (!common.count(type)) others.insert(type);
    }
    if (!others.empty()) all.non_common = std::make_shared<EvalReport>(subset_prf(pred, gold, others));
    return all;
}

std::string report_json(const EvalReport& report, int indent) { return to_json(report).dump(indent); }

EvalReport parse_report_json(const std::string& text) { return from_json(json::parse(text)); }

std::vector<TagSequence> to_tags(const std::vector<IntVector>& ids, const LabelScheme& scheme) {
    std::vector<TagSequence> out;
    out.reserve(ids.size());
    for (const auto& seq : ids) {
        TagSequence tags;
        tags.reserve(seq.size());
        for (int id : seq) tags.push_back(scheme.tag(id));
        out.push_back(std::move(tags));
    }
    return out;
}

void write_eval_dump(std::ostream& out, const std::vector<std::vector<std::string>>& tokens,
                     const std::vector<TagSequence>& gold, const std::vector<TagSequence>& pred) {
    check_shapes(pred, gold);
    if (tokens.size() != gold.size()) throw std::invalid_argument("write_eval_dump: sentence counts differ");
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        if (tokens[s].size() != gold[s].size()) throw std::invalid_argument("write_eval_dump: sentence length");
        for (std::size_t i = 0; i < tokens[s].size(); ++i) {
            out << tokens[s][i] << ' ' << gold[s][i] << ' ' << pred[s][i] << '\n';
        }
        out << '\n';
    }
}

double domain_probe(const Matrix& latents, const IntVector& domains, std::uint64_t seed, const ProbeConfig& config) {
    if (latents.rows() != static_cast<Eigen::Index>(domains.size())) {
        throw std::invalid_argument("domain_probe: one domain label per latent row");
    }
    std::vector<std::vector<int>> by_domain(2);
    for (std::size_t i = 0; i < domains.size(); ++i) {
        const int d = domains[i];
        if (d != kSourceDomain && d != kTargetDomain) throw std::invalid_argument("domain_probe: domain id not 0/1");
        by_domain[static_cast<std::size_t>(d)].push_back(static_cast<int>(i));
    }
    if (by_domain[0].size() < 2 || by_domain[1].size() < 2) {
        throw std::invalid_argument("domain_probe: need at least two sentences from each domain");
    }

    Rng rng(seed);
    IntVector train, test;
    for (auto& rows : by_domain) {
        rng.shuffle(rows);
        auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(rows.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
        train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
        test.insert(test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    }

    Matrix x_train = latents(train, Eigen::all);
    Matrix x_test = latents(test, Eigen::all);
    const RowVector mean = x_train.colwise().mean();
    RowVector sd = ((x_train.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(train.size()))
                       .sqrt()
                       .matrix();
    for (Eigen::Index c = 0; c < sd.size(); ++c) {
        if (sd(c) < 1e-12) sd(c) = 1.0;
    }
    x_train = ((x_train.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    x_test = ((x_test.rowwise() - mean).array().rowwise() / sd.array()).matrix();

    IntVector y_train, y_test;
    for (int r : train) y_train.push_back(domains[static_cast<std::size_t>(r)]);
    for (int r : test) y_test.push_back(domains[static_cast<std::size_t>(r)]);

    Matrix w = Matrix::Zero(latents.cols(), 2);
    RowVector b = RowVector::Zero(2);
    Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(y_train.size()), 2);
    for (std::size_t i = 0; i < y_train.size(); ++i) onehot(static_cast<Eigen::Index>(i), y_train[i]) = 1.0;
    const double n = static_cast<double>(y_train.size());
    for (int step = 0; step < config.steps; ++step) {
        Matrix logits = x_train * w;
        logits.rowwise() += b;
        const Matrix g = (ad::softmax_rows(logits) - onehot) / n;
        w -= config.learning_rate * (x_train.transpose() * g);
        b -= config.learning_rate * g.colwise().sum();
    }

    Matrix logits = x_test * w;
    logits.rowwise() += b;
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        // ties go to domain 0
        const int guess = logits(i, 1) > logits(i, 0) ? 1 : 0;
        if (guess == y_test[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(y_test.size());
}

}  // namespace ssd
