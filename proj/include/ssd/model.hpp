#pragma once

// The full tagging model and its parameter groups.
//
// A disentangled model has two encoders, G_z (domain-specific) and G_v
// (domain-invariant), whose outputs are concatenated per token for both CRF
// heads. A shared model (the baseline architecture) has one encoder feeding
// both heads and no disentanglement parts.

#include "ssd/corpus.hpp"
#include "ssd/crf.hpp"
#include "ssd/disentangler.hpp"
#include "ssd/embedder.hpp"
#include "ssd/encoders.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ssd {

enum class Architecture { Disentangled, Shared };

/// Which embedding is paired with z and v in the two "keep informative" MI terms.
enum class MiTarget { Original, Reconstructed };

struct ModelConfig {
    EmbedderConfig embedder;
    EncoderConfig encoder;
    int decoder_hidden = 200;
    int critic_hidden = 128;
    double ema_decay = 0.99;
};

/// Parameter roles in the alternating schedule.
enum class Role {
    Tagger,           ///< embedder, encoders, both CRF heads
    Decoder,          ///< reconstruction decoder
    DomainPredictor,  ///< domain classifier over z
    Critic,           ///< mutual-information critics
};

struct ParameterGroup {
    std::string name;
    Role role;
    std::vector<ad::Parameter*> params;
};

class Model {
public:
    Model() = default;
    Model(const ModelConfig& config, Architecture architecture, Vocabulary vocab, LabelScheme source_scheme,
          LabelScheme target_scheme, std::uint64_t seed);

    ModelConfig config;
    Architecture architecture = Architecture::Disentangled;
    Vocabulary vocab;
    LabelScheme source_scheme;
    LabelScheme target_scheme;

    Embedder embedder;
    Encoder encoder_z;  ///< the only encoder of a shared model
    Encoder encoder_v;
    CrfHead head_source;
    CrfHead head_target;
    Decoder decoder;
    DomainPredictor domain_predictor;
    CriticSet critics;

    bool disentangled() const { return architecture == Architecture::Disentangled; }
    int latent_dim() const { return encoder_z.output_dim(); }
    int rep_dim() const { return disentangled() ? 2 * latent_dim() : latent_dim(); }
    CrfHead& head(int domain) { return domain == kSourceDomain ? head_source : head_target; }

    /// Every parameter belongs to exactly one group.
    std::vector<ParameterGroup> groups();
    std::vector<ad::Parameter*> parameters(Role role);
    std::vector<ad::Parameter*> all_parameters();
    /// Fresh initialization of one CRF head.
    void reset_head(int domain, std::uint64_t seed);
};

std::map<std::string, std::uint64_t> group_checksums(Model& model);

/// Forward products of one batch.
struct Encoded {
    ad::Var embeddings;  ///< input embedding before dropout
    ad::Var z;           ///< G_z output (the shared encoder's output for a shared model)
    ad::Var v;           ///< G_v output; invalid for a shared model
    ad::Var rep;         ///< CRF input: z ⊕ v, or the shared encoder output
};

/// Embeds and encodes a batch. Dropout with `dropout_rate` (0 disables) is
/// applied to the embeddings of real tokens only, with masks drawn in token
/// order from `seed`, so extra padding never changes the draw.
Encoded encode_batch(ad::Tape& tape, Model& model, const Batch& batch, bool trainable, double dropout_rate,
                     std::uint64_t seed);

/// Mean CRF negative log-likelihood of a batch under one domain's head.
ad::Var tagging_loss(ad::Tape& tape, const ad::Var& rep, const Batch& batch, CrfHead& head, bool trainable);

/// Mean source NLL + mean target NLL (heads S and T), dropout off.
double joint_tagging_loss(Model& model, const Batch& source, const Batch& target);

/// Rows of the real tokens, in batch order.
IntVector token_rows(const Batch& batch);

/// Viterbi labels for every sentence, target head unless `domain` says otherwise.
std::vector<IntVector> predict(Model& model, const EncodedCorpus& corpus, int domain = kTargetDomain,
                               bool constrained = false);

/// Per-token latent samples (z, v and the MI target embedding) with frozen model.
LatentSamples collect_latents(Model& model, const Batch& batch, MiTarget target);

/// Max-pooled z (or v) per sentence, one row per sentence.
Matrix pooled_latents(Model& model, const EncodedCorpus& corpus, bool use_v);

}  // namespace ssd
