#pragma once

// Command implementations behind the `ssd` executable. Each returns the
// process exit status: 0 success, 1 runtime failure, 2 usage or validation
// failure. Messages go to `err`, results to `out`.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ssd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct TrainOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string resume_path;
};

struct EvalOptions {
    std::string checkpoint;
    std::string test;
    std::vector<std::string> common_types;
    bool constrained = false;
    std::string dump_path;
    int token_column = 0;
    int label_column = 1;
};

struct PredictOptions {
    std::string checkpoint;
    std::string input;
    std::string output;  ///< empty writes to `out`
    bool constrained = false;
    int token_column = 0;
};

struct ProbeOptions {
    std::string checkpoint;
    std::string corpus;  ///< mixed file with a domain column
    int token_column = 0;
    int domain_column = 2;
    std::string source;  ///< or one file per domain
    std::string target;
    std::uint64_t probe_seed = 0;
    int mi_steps = 300;
};

struct SynthOptions {
    std::string spec_path;  ///< empty uses the built-in benchmark
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

struct VocabOptions {
    std::vector<std::string> corpora;
    int token_column = 0;
    int label_column = 1;
    int min_word_freq = 1;
    std::string out_dir;
};

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_predict(const PredictOptions& options, std::ostream& out, std::ostream& err);
int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err);
int cmd_vocab(const VocabOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches; used by main and by the CLI tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssd::cli
