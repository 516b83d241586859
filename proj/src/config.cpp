#include "ssd/config.hpp"

#include "ssd/error.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ssd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

std::string key_name(const std::string& section, const std::string& key) { return section + "." + key; }

long long parse_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError(key_name(section, key) + ": expected an integer, got '" + v + "'");
}

double parse_double(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError(key_name(section, key) + ": expected a number, got '" + v + "'");
}

}  // namespace

RunConfig::RunConfig() {
    values_["model"] = {
        {"word_dim", "100"},     {"char_dim", "100"}, {"char_filters", "100"},    {"char_window", "3"},
        {"hidden", "100"},       {"heads", "4"},      {"head_dim", "50"},         {"decoder_hidden", "200"},
        {"critic_hidden", "128"}, {"ema_decay", "0.99"},
    };
    values_["trainer"] = {
        {"mode", "ssd"},          {"K_p", "200"},         {"K_m", "50"},       {"K_i", "10"},
        {"baseline_steps", "0"},  {"learning_rate", "0.001"}, {"beta1", "0.9"}, {"beta2", "0.999"},
        {"epsilon", "1e-8"},      {"clip_norm", "5"},     {"optimizer", "adam"}, {"batch_size", "64"},
        {"dropout", "0.5"},       {"lambda_r", "1"},      {"lambda_d", "1"},   {"lambda_mi", "1"},
        {"mi_target", "original"}, {"seed", "1"},
    };
    values_["data"] = {
        {"source", ""},         {"target", ""},      {"dev", ""},              {"test", ""},
        {"token_column", "0"},  {"label_column", "1"}, {"max_length", "128"}, {"target_fraction", "1"},
        {"min_word_freq", "1"}, {"pretrained", ""},
    };
    values_["output"] = {{"dir", "run"}, {"checkpoint_every", "0"}};
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    const auto s = values_.find(section);
    if (s == values_.end()) throw ConfigError("unknown section [" + section + "]");
    const auto k = s->second.find(key);
    if (k == s->second.end()) throw ConfigError("unknown key " + key_name(section, key));
    k->second = value;
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override must look like section.key=value: '" + assignment + "'");
    }
    set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& section, const std::string& key) const {
    const auto s = values_.find(section);
    if (s == values_.end()) throw ConfigError("unknown section [" + section + "]");
    const auto k = s->second.find(key);
    if (k == s->second.end()) throw ConfigError("unknown key " + key_name(section, key));
    return k->second;
}

void RunConfig::merge_ini(std::istream& in, const std::string& origin) {
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find_first_of("#;");
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!values_.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside of a section");
        try {
            set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    merge_ini(in, path);
}

std::string RunConfig::env_name(const std::string& section, const std::string& key) {
    return "SSD_" + upper(section) + "_" + upper(key);
}

void RunConfig::merge_env(const std::function<std::optional<std::string>(const std::string&)>& lookup) {
    const auto get_env = [&](const std::string& name) -> std::optional<std::string> {
        if (lookup) return lookup(name);
        const char* v = std::getenv(name.c_str());
        return v == nullptr ? std::nullopt : std::optional<std::string>(v);
    };
    for (auto& [section, keys] : values_) {
        for (auto& [key, value] : keys) {
            if (auto v = get_env(env_name(section, key))) value = trim(*v);
        }
    }
}

std::string RunConfig::to_ini() const {
    std::ostringstream out;
    bool first = true;
    for (const char* section : {"model", "trainer", "data", "output"}) {
        if (!first) out << '\n';
        first = false;
        out << '[' << section << "]\n";
        for (const auto& [key, value] : values_.at(section)) out << key << " = " << value << '\n';
    }
    return out.str();
}

ModelConfig RunConfig::model() const {
    const auto i = [&](const char* k) { return static_cast<int>(parse_int("model", k, get("model", k))); };
    ModelConfig c;
    c.embedder.word_dim = i("word_dim");
    c.embedder.char_dim = i("char_dim");
    c.embedder.char_filters = i("char_filters");
    c.embedder.char_window = i("char_window");
    c.encoder.hidden = i("hidden");
    c.encoder.heads = i("heads");
    c.encoder.head_dim = i("head_dim");
    c.decoder_hidden = i("decoder_hidden");
    c.critic_hidden = i("critic_hidden");
    c.ema_decay = parse_double("model", "ema_decay", get("model", "ema_decay"));
    for (const char* k : {"word_dim", "char_dim", "char_filters", "char_window", "hidden", "heads", "head_dim",
                          "decoder_hidden", "critic_hidden"}) {
        if (i(k) < 1) throw ConfigError(key_name("model", k) + " must be >= 1");
    }
    if (c.embedder.char_window % 2 == 0) throw ConfigError("model.char_window must be odd");
    if (!(c.ema_decay > 0.0 && c.ema_decay < 1.0)) throw ConfigError("model.ema_decay must lie in (0, 1)");
    return c;
}

TrainingConfig RunConfig::training() const {
    const auto i = [&](const char* k) { return static_cast<int>(parse_int("trainer", k, get("trainer", k))); };
    const auto d = [&](const char* k) { return parse_double("trainer", k, get("trainer", k)); };
    TrainingConfig c;
    try {
        c.mode = parse_train_mode(get("trainer", "mode"));
        c.mi_target = parse_mi_target(get("trainer", "mi_target"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.k_p = i("K_p");
    c.k_m = i("K_m");
    c.k_i = i("K_i");
    c.baseline_steps = i("baseline_steps");
    c.learning_rate = d("learning_rate");
    c.beta1 = d("beta1");
    c.beta2 = d("beta2");
    c.epsilon = d("epsilon");
    c.clip_norm = d("clip_norm");
    c.optimizer = get("trainer", "optimizer");
    c.batch_size = i("batch_size");
    c.dropout = d("dropout");
    c.lambda_r = d("lambda_r");
    c.lambda_d = d("lambda_d");
    c.lambda_mi = d("lambda_mi");
    const long long seed = parse_int("trainer", "seed", get("trainer", "seed"));
    if (seed < 0) throw ConfigError("trainer.seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("trainer: ") + e.what());
    }
    return c;
}

DataConfig RunConfig::data() const {
    const auto i = [&](const char* k) { return static_cast<int>(parse_int("data", k, get("data", k))); };
    DataConfig c;
    c.source = get("data", "source");
    c.target = get("data", "target");
    c.dev = get("data", "dev");
    c.test = get("data", "test");
    c.token_column = i("token_column");
    c.label_column = i("label_column");
    c.max_length = i("max_length");
    c.target_fraction = parse_double("data", "target_fraction", get("data", "target_fraction"));
    c.min_word_freq = i("min_word_freq");
    c.pretrained = get("data", "pretrained");
    if (c.token_column < 0 || c.label_column < 0 || c.token_column == c.label_column) {
        throw ConfigError("data: token and label columns must be distinct and >= 0");
    }
    if (c.max_length < 1) throw ConfigError("data.max_length must be >= 1");
    if (!(c.target_fraction > 0.0 && c.target_fraction <= 1.0)) {
        throw ConfigError("data.target_fraction must lie in (0, 1]");
    }
    if (c.min_word_freq < 1) throw ConfigError("data.min_word_freq must be >= 1");
    return c;
}

OutputConfig RunConfig::output() const {
    OutputConfig c;
    c.dir = get("output", "dir");
    c.checkpoint_every = static_cast<int>(parse_int("output", "checkpoint_every", get("output", "checkpoint_every")));
    if (c.dir.empty()) throw ConfigError("output.dir must not be empty");
    if (c.checkpoint_every < 0) throw ConfigError("output.checkpoint_every must be >= 0");
    return c;
}

void RunConfig::validate() const {
    model();
    training();
    data();
    output();
}

void RunConfig::resolve_paths(const std::string& base_dir) {
    for (const char* key : {"source", "target", "dev", "test", "pretrained"}) {
        std::string& v = values_["data"][key];
        if (v.empty()) continue;
        const std::filesystem::path p(v);
        if (p.is_relative()) v = (std::filesystem::path(base_dir) / p).lexically_normal().string();
    }
    std::string& dir = values_["output"]["dir"];
    if (std::filesystem::path(dir).is_relative()) {
        dir = (std::filesystem::path(base_dir) / dir).lexically_normal().string();
    }
}

}  // namespace ssd
