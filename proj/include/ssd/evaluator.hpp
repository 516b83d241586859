#pragma once

// Entity-level scoring and the domain-probe diagnostic.

#include "ssd/corpus.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace ssd {

struct EntitySpan {
    std::string type;
    int start = 0;  ///< inclusive
    int end = 0;    ///< exclusive

    auto operator<=>(const EntitySpan&) const = default;
};

using TagSequence = std::vector<std::string>;

/// Maximal B-X I-X* runs; a stray I-X opens a new span of type X.
std::vector<EntitySpan> extract_entities(const TagSequence& tags);

struct SpanCounts {
    long long true_positives = 0;
    long long predicted = 0;
    long long gold = 0;

    double precision() const { return predicted == 0 ? 0.0 : static_cast<double>(true_positives) / predicted; }
    double recall() const { return gold == 0 ? 0.0 : static_cast<double>(true_positives) / gold; }
    double f1() const;
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    SpanCounts counts;
    std::map<std::string, SpanCounts> per_type;
    std::shared_ptr<EvalReport> common;
    std::shared_ptr<EvalReport> non_common;
};

/// Exact-span micro-averaged scores. Throws std::invalid_argument when the
/// corpora differ in sentence count or any sentence length.
EvalReport entity_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold);

/// Scores after dropping every span whose type is outside `types` (non-empty).
EvalReport subset_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                      const std::set<std::string>& types);

/// entity_prf plus common / non-common sub-reports. Non-common types are all
/// observed types outside `common`; that sub-report is omitted when none exist.
EvalReport split_prf(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                     const std::set<std::string>& common);

std::string report_json(const EvalReport& report, int indent = 2);
EvalReport parse_report_json(const std::string& text);

/// Tag strings of label-id sequences.
std::vector<TagSequence> to_tags(const std::vector<IntVector>& ids, const LabelScheme& scheme);

/// "token gold pred" lines with a blank line after every sentence.
void write_eval_dump(std::ostream& out, const std::vector<std::vector<std::string>>& tokens,
                     const std::vector<TagSequence>& gold, const std::vector<TagSequence>& pred);

struct ProbeConfig {
    double train_fraction = 0.7;
    int steps = 100;
    double learning_rate = 0.1;
};

/// Held-out accuracy of an affine softmax classifier predicting the domain
/// from one latent row per sentence. The split is stratified by domain and
/// features are standardized with training-split statistics.
/// Throws std::invalid_argument unless both domains have >= 2 rows.
double domain_probe(const Matrix& latents, const IntVector& domains, std::uint64_t seed,
                    const ProbeConfig& config = {});

}  // namespace ssd
