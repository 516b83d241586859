#pragma once

// Run configuration: INI-style sections [model] [trainer] [data] [output].
//
// Values are layered: built-in defaults < config file < environment
// (SSD_<SECTION>_<KEY>, upper case) < explicit "section.key=value"
// overrides. Every key must be known; unknown keys raise ConfigError.

#include "ssd/model.hpp"
#include "ssd/trainer.hpp"

#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ssd {

struct DataConfig {
    std::string source;
    std::string target;
    std::string dev;
    std::string test;
    int token_column = 0;
    int label_column = 1;
    int max_length = 128;
    /// Fraction of the target training corpus kept (1 keeps everything).
    double target_fraction = 1.0;
    int min_word_freq = 1;
    std::string pretrained;
};

struct OutputConfig {
    std::string dir = "run";
    /// Checkpoint and dev evaluation period in steps; 0 only writes the final checkpoint.
    int checkpoint_every = 0;
};

class RunConfig {
public:
    /// All keys at their defaults.
    RunConfig();

    /// Merges "key = value" lines under [section] headers. Throws ConfigError
    /// (with the line number) for syntax errors and unknown keys.
    void merge_ini(std::istream& in, const std::string& origin = "config");
    void merge_file(const std::string& path);
    /// Applies SSD_<SECTION>_<KEY> variables; `lookup` defaults to getenv.
    void merge_env(const std::function<std::optional<std::string>(const std::string&)>& lookup = {});
    /// "section.key=value".
    void set(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    const std::string& get(const std::string& section, const std::string& key) const;
    /// Effective configuration as INI text, every key listed.
    std::string to_ini() const;

    /// Typed views; throw ConfigError for unparsable or out-of-range values.
    ModelConfig model() const;
    TrainingConfig training() const;
    DataConfig data() const;
    OutputConfig output() const;
    void validate() const;

    /// Rewrites relative data paths against `base_dir`.
    void resolve_paths(const std::string& base_dir);

    static std::string env_name(const std::string& section, const std::string& key);

private:
    std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace ssd
