#pragma once

// Two-domain synthetic tagging benchmark: shared sentence templates filled
// with per-domain entity lexicons.
//
// A template slot carries a role index; each domain maps roles to its own
// entity types, so the same slot is, say, an organization in one domain and
// a facility in the other. Templates are the shared factor, filler words the
// domain-specific one.

#include "ssd/corpus.hpp"

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace ssd {

struct TemplateToken {
    std::string word;  ///< literal word; empty for a slot
    int role = -1;     ///< slot role, -1 for a literal

    bool is_slot() const { return role >= 0; }
};

struct Template {
    std::vector<TemplateToken> tokens;
    double weight = 1.0;
};

struct SyntheticDomain {
    std::string name;
    /// role index -> entity type
    std::vector<std::string> role_types;
    /// entity type -> fillers (each one or more tokens)
    std::map<std::string, std::vector<std::vector<std::string>>> lexicon;
};

struct SyntheticSpec {
    std::vector<Template> templates;
    SyntheticDomain source;
    SyntheticDomain target;
    int source_sentences = 2000;
    int target_train_sentences = 200;
    int target_test_sentences = 500;
    /// Probability that a literal token is replaced by a random noise word.
    double noise_rate = 0.05;
    /// Replacement words; empty means every literal seen in the templates.
    std::vector<std::string> noise_words;
    std::uint64_t seed = 7;

    /// Throws SpecError when a slot has no fillers in some domain or a count,
    /// weight or rate is out of range.
    void validate() const;
    /// Entity types present in both domains.
    std::vector<std::string> overlap_types() const;
    /// Normalized template probabilities.
    std::vector<double> template_distribution() const;
};

struct SyntheticCorpora {
    Corpus source;
    Corpus target_train;
    Corpus target_test;
    /// Template index of every sentence, aligned with the corpora.
    IntVector source_templates;
    IntVector target_train_templates;
    IntVector target_test_templates;
};

/// Benchmark used by the acceptance suite: 20 templates of 5-12 tokens,
/// source types {PER, ORG, LAW}, target types {PER, FAC, PROD}.
SyntheticSpec default_spec(std::uint64_t seed = 7);

/// Deterministic in spec.seed; sentence k of a domain uses its own derived seed.
SyntheticCorpora generate(const SyntheticSpec& spec);

/// Line-based text format:
///   key = value             (seed, source_sentences, target_train_sentences,
///                            target_test_sentences, noise_rate, noise_words,
///                            source_name, target_name, source_roles, target_roles)
///   template <weight> = w1 {0} w2 ...   ({r} is a slot of role r)
///   filler <source|target> <TYPE> = tok1 tok2 ...
/// '#' starts a comment. Throws FormatError with the line number.
SyntheticSpec parse_synthetic_spec(std::istream& in);
void write_synthetic_spec(std::ostream& out, const SyntheticSpec& spec);

}  // namespace ssd
