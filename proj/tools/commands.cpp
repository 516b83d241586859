#include "commands.hpp"

#include "ssd/checkpoint.hpp"
#include "ssd/config.hpp"
#include "ssd/corpus.hpp"
#include "ssd/embedder.hpp"
#include "ssd/error.hpp"
#include "ssd/evaluator.hpp"
#include "ssd/io.hpp"
#include "ssd/model.hpp"
#include "ssd/synthdata.hpp"
#include "ssd/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace ssd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad invocation or input that the user must fix.
class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::uint64_t kModelInitSalt = 0x1417;

/// Exclusive claim on an output directory for the lifetime of one command.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) throw std::runtime_error("output directory is locked by another command: " + path_.string());
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto written = ::write(fd_, pid.data(), pid.size());
    }
    ~OutputLock() {
        ::close(fd_);
        std::error_code ignored;
        fs::remove(path_, ignored);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

/// Runs `fn`, mapping validation failures to exit 2 and anything else to 1.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const SchemeError& e) {
        err << "label scheme error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const SpecError& e) {
        err << "spec error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IncompatibleCheckpoint& e) {
        err << "incompatible checkpoint: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IntegrityError& e) {
        err << "damaged checkpoint: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw UsageError(what + " path is required");
    if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

CheckpointData open_checkpoint(const std::string& path) {
    require_file(path, "checkpoint");
    return load_checkpoint(path);
}

Corpus read_corpus(const std::string& path, const DataConfig& data, int domain_id, const std::string& name) {
    ConllOptions o;
    o.token_column = static_cast<std::size_t>(data.token_column);
    o.label_column = static_cast<std::size_t>(data.label_column);
    o.domain_id = domain_id;
    o.domain_name = name;
    o.max_length = static_cast<std::size_t>(data.max_length);
    return read_conll_file(path, o);
}

/// Whitespace-split rows grouped into blank-line separated sentences.
std::vector<std::vector<std::vector<std::string>>> read_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read " + path);
    std::vector<std::vector<std::vector<std::string>>> sentences;
    std::vector<std::vector<std::string>> current;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::vector<std::string> row;
        std::string f;
        while (fields >> f) row.push_back(f);
        if (row.empty()) {
            if (!current.empty()) sentences.push_back(std::move(current));
            current.clear();
            continue;
        }
        if (row[0] == "-DOCSTART-") continue;
        current.push_back(std::move(row));
    }
    if (!current.empty()) sentences.push_back(std::move(current));
    return sentences;
}

std::string column(const std::vector<std::string>& row, int index, const std::string& path) {
    if (index < 0 || static_cast<std::size_t>(index) >= row.size()) {
        throw UsageError(path + ": row has no column " + std::to_string(index));
    }
    return row[static_cast<std::size_t>(index)];
}

EncodedSentence encode_tokens(const Vocabulary& vocab, const std::vector<std::string>& tokens, int domain_id) {
    EncodedSentence s;
    s.domain_id = domain_id;
    for (const auto& t : tokens) s.tokens.push_back(vocab.encode_token(t));
    s.label_ids.assign(tokens.size(), 0);
    return s;
}

double dev_f1(Model& model, const EncodedCorpus& dev) {
    std::vector<IntVector> gold;
    for (const auto& s : dev.sentences) gold.push_back(s.label_ids);
    const auto pred = predict(model, dev, kTargetDomain);
    return entity_prf(to_tags(pred, model.target_scheme), to_tags(gold, model.target_scheme)).f1;
}

int parse_domain(const std::string& value, const Model& model, const std::string& path) {
    if (value == "0" || value == "source" || value == model.source_scheme.domain_name()) return kSourceDomain;
    if (value == "1" || value == "target" || value == model.target_scheme.domain_name()) return kTargetDomain;
    throw UsageError(path + ": unknown domain '" + value + "'");
}

}  // namespace

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    TrainingConfig training;
    ModelConfig model_config;
    DataConfig data;
    OutputConfig output;
    Corpus source, target, dev;
    std::optional<CheckpointData> resumed;

    const int validated = guarded(err, [&] {
        if (!options.config_path.empty()) {
            cfg.merge_file(options.config_path);
            cfg.resolve_paths(fs::absolute(options.config_path).parent_path().string());
        }
        cfg.merge_env();
        for (const auto& o : options.overrides) cfg.set(o);
        cfg.resolve_paths(fs::current_path().string());
        cfg.validate();
        training = cfg.training();
        model_config = cfg.model();
        data = cfg.data();
        output = cfg.output();
        if (!options.resume_path.empty()) {
            resumed = open_checkpoint(options.resume_path);
            training = resumed->training;
        }

        const bool needs_source = training.mode != TrainMode::InDomain;
        require_file(data.target, "data.target");
        if (needs_source) require_file(data.source, "data.source");
        if (!data.dev.empty()) require_file(data.dev, "data.dev");
        if (!data.pretrained.empty()) require_file(data.pretrained, "data.pretrained");
        if (fs::exists(output.dir) && !fs::is_directory(output.dir)) {
            throw UsageError("output.dir exists and is not a directory: " + output.dir);
        }

        target = read_corpus(data.target, data, kTargetDomain, "target");
        if (data.target_fraction < 1.0) {
            target = split_target_fraction(target, data.target_fraction, training.seed);
        }
        if (target.empty()) throw UsageError("target corpus is empty");
        if (needs_source) {
            source = read_corpus(data.source, data, kSourceDomain, "source");
            if (source.empty()) throw UsageError("source corpus is empty");
        }
        if (!data.dev.empty()) dev = relabel(read_corpus(data.dev, data, kTargetDomain, "target"), target.scheme);
        return kExitOk;
    });
    if (validated != kExitOk) return validated;

    return guarded(err, [&] {
        fs::create_directories(output.dir);
        const OutputLock lock(output.dir);
        const bool has_source = !source.empty();
        const fs::path dir(output.dir);

        Model model;
        if (resumed) {
            model = resumed->model;
        } else {
            std::vector<const Corpus*> corpora{&target};
            if (has_source) corpora.insert(corpora.begin(), &source);
            Vocabulary vocab = Vocabulary::build(corpora, data.min_word_freq);
            const Architecture arch = training.mode == TrainMode::Ssd ? Architecture::Disentangled : Architecture::Shared;
            const LabelScheme source_scheme = has_source ? source.scheme : target.scheme;
            model = Model(model_config, arch, vocab, source_scheme, target.scheme,
                          Rng::derive(training.seed, kModelInitSalt));
            if (!data.pretrained.empty()) {
                std::ifstream in(data.pretrained);
                Rng rng(Rng::derive(training.seed, kModelInitSalt + 1));
                Matrix vectors = load_pretrained(in, model.vocab, model_config.embedder.word_dim, rng);
                if (vectors.cols() != model_config.embedder.word_dim) {
                    throw UsageError("pretrained vectors have dimension " + std::to_string(vectors.cols()) +
                                     ", model.word_dim is " + std::to_string(model_config.embedder.word_dim));
                }
                model.embedder.set_word_vectors(std::move(vectors));
            }
        }
        if (has_source && !(model.source_scheme == source.scheme)) source = relabel(source, model.source_scheme);
        if (!(model.target_scheme == target.scheme)) target = relabel(target, model.target_scheme);
        if (!dev.empty() && !(model.target_scheme == dev.scheme)) dev = relabel(dev, model.target_scheme);

        const EncodedCorpus enc_source = has_source ? model.vocab.encode(source) : EncodedCorpus{};
        const EncodedCorpus enc_target = model.vocab.encode(target);
        const EncodedCorpus enc_dev = dev.empty() ? EncodedCorpus{} : model.vocab.encode(dev);

        Trainer trainer(model, has_source ? &enc_source : nullptr, &enc_target, training);
        if (resumed) {
            resume(trainer, *resumed);
            if (fs::exists(dir / "metrics.ndjson")) {
                std::ifstream in(dir / "metrics.ndjson");
                trainer.metrics() = RunMetrics::read_ndjson(in);
            }
        }
        const std::string config_text = cfg.to_ini();
        double best = -1.0;
        const auto checkpoint = [&](Trainer& t) {
            save_checkpoint((dir / "last.ckpt").string(), capture(t, config_text));
            if (enc_dev.empty()) return;
            const double f1 = dev_f1(t.model(), enc_dev);
            t.metrics().append({t.global_step(), "eval", "dev_f1", f1, 0.0});
            if (f1 > best) {
                best = f1;
                save_checkpoint((dir / "best.ckpt").string(), capture(t, config_text));
            }
        };
        if (output.checkpoint_every > 0) trainer.set_step_hook(output.checkpoint_every, checkpoint);
        trainer.run();
        checkpoint(trainer);

        save_checkpoint((dir / "model.ckpt").string(), capture(trainer, config_text));
        std::ostringstream metrics;
        trainer.metrics().write_ndjson(metrics);
        write_file_atomic((dir / "metrics.ndjson").string(), metrics.str());
        write_file_atomic((dir / "config.ini").string(), config_text);
        std::ostringstream words, chars;
        model.vocab.save_words(words);
        model.vocab.save_chars(chars);
        write_file_atomic((dir / "words.txt").string(), words.str());
        write_file_atomic((dir / "chars.txt").string(), chars.str());

        json summary = {{"mode", to_string(training.mode)},
                        {"steps", trainer.global_step()},
                        {"checkpoint", (dir / "model.ckpt").string()},
                        {"metrics_records", trainer.metrics().size()}};
        if (best >= 0.0) summary["best_dev_f1"] = best;
        out << summary.dump(2) << '\n';
        return kExitOk;
    });
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        CheckpointData ck = open_checkpoint(options.checkpoint);
        require_file(options.test, "test corpus");
        Model& model = ck.model;
        DataConfig data;
        data.token_column = options.token_column;
        data.label_column = options.label_column;
        data.max_length = std::numeric_limits<int>::max();
        const Corpus test = relabel(read_corpus(options.test, data, kTargetDomain, "target"), model.target_scheme);
        std::set<std::string> common;
        for (const auto& t : options.common_types) {
            if (!model.target_scheme.has_type(t)) throw UsageError("unknown entity type in types list: " + t);
            common.insert(t);
        }
        const EncodedCorpus enc = model.vocab.encode(test);
        const auto pred = to_tags(predict(model, enc, kTargetDomain, options.constrained), model.target_scheme);
        std::vector<TagSequence> gold;
        std::vector<std::vector<std::string>> tokens;
        for (const auto& s : test.sentences) {
            TagSequence g;
            for (int id : s.label_ids) g.push_back(model.target_scheme.tag(id));
            gold.push_back(std::move(g));
            tokens.push_back(s.words);
        }
        const EvalReport report = common.empty() ? entity_prf(pred, gold) : split_prf(pred, gold, common);
        if (!options.dump_path.empty()) {
            std::ostringstream dump;
            write_eval_dump(dump, tokens, gold, pred);
            write_file_atomic(options.dump_path, dump.str());
        }
        out << report_json(report) << '\n';
        return kExitOk;
    });
}

int cmd_predict(const PredictOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        CheckpointData ck = open_checkpoint(options.checkpoint);
        require_file(options.input, "input");
        Model& model = ck.model;
        EncodedCorpus corpus;
        corpus.scheme = model.target_scheme;
        corpus.domain_id = kTargetDomain;
        std::vector<std::vector<std::string>> tokens;
        for (const auto& rows : read_rows(options.input)) {
            std::vector<std::string> words;
            for (const auto& row : rows) words.push_back(column(row, options.token_column, options.input));
            corpus.sentences.push_back(encode_tokens(model.vocab, words, kTargetDomain));
            tokens.push_back(std::move(words));
        }
        const auto pred = to_tags(predict(model, corpus, kTargetDomain, options.constrained), model.target_scheme);
        std::ostringstream text;
        for (std::size_t s = 0; s < tokens.size(); ++s) {
            for (std::size_t i = 0; i < tokens[s].size(); ++i) text << tokens[s][i] << '\t' << pred[s][i] << '\n';
            text << '\n';
        }
        if (options.output.empty()) {
            out << text.str();
        } else {
            write_file_atomic(options.output, text.str());
        }
        return kExitOk;
    });
}

int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        CheckpointData ck = open_checkpoint(options.checkpoint);
        Model& model = ck.model;
        std::array<EncodedCorpus, 2> by_domain;
        by_domain[0].domain_id = kSourceDomain;
        by_domain[1].domain_id = kTargetDomain;
        if (!options.corpus.empty()) {
            if (!options.source.empty() || !options.target.empty()) {
                throw UsageError("give either --corpus or --source/--target");
            }
            require_file(options.corpus, "corpus");
            for (const auto& rows : read_rows(options.corpus)) {
                std::vector<std::string> words;
                for (const auto& row : rows) words.push_back(column(row, options.token_column, options.corpus));
                const int d = parse_domain(column(rows.front(), options.domain_column, options.corpus), model,
                                           options.corpus);
                for (const auto& row : rows) {
                    if (parse_domain(column(row, options.domain_column, options.corpus), model, options.corpus) != d) {
                        throw UsageError(options.corpus + ": sentence mixes domains");
                    }
                }
                by_domain[static_cast<std::size_t>(d)].sentences.push_back(encode_tokens(model.vocab, words, d));
            }
        } else {
            const std::array<std::string, 2> paths{options.source, options.target};
            for (int d = 0; d < 2; ++d) {
                require_file(paths[static_cast<std::size_t>(d)], d == 0 ? "source corpus" : "target corpus");
                for (const auto& rows : read_rows(paths[static_cast<std::size_t>(d)])) {
                    std::vector<std::string> words;
                    for (const auto& row : rows) words.push_back(column(row, options.token_column, paths[static_cast<std::size_t>(d)]));
                    by_domain[static_cast<std::size_t>(d)].sentences.push_back(encode_tokens(model.vocab, words, d));
                }
            }
        }
        if (by_domain[0].size() < 2 || by_domain[1].size() < 2) {
            throw UsageError("probing needs at least two sentences from each domain");
        }

        IntVector domains;
        for (int d = 0; d < 2; ++d) domains.insert(domains.end(), by_domain[static_cast<std::size_t>(d)].size(), d);
        const auto pooled = [&](bool use_v) {
            const Matrix a = pooled_latents(model, by_domain[0], use_v);
            const Matrix b = pooled_latents(model, by_domain[1], use_v);
            Matrix all(a.rows() + b.rows(), a.cols());
            all << a, b;
            return all;
        };
        json result;
        result["probe_z_accuracy"] = domain_probe(pooled(false), domains, options.probe_seed);
        if (model.disentangled()) {
            result["probe_v_accuracy"] = domain_probe(pooled(true), domains, options.probe_seed);
            const MiReport mi = estimate_mutual_information(model, {&by_domain[0], &by_domain[1]}, options.mi_steps,
                                                            64, options.probe_seed);
            result["mi_estimates"] = {{"z_v", mi.mi_zv}, {"w_z", mi.mi_wz}, {"w_v", mi.mi_wv}};
        } else {
            result["probe_v_accuracy"] = nullptr;
            result["mi_estimates"] = nullptr;
        }
        out << result.dump(2) << '\n';
        return kExitOk;
    });
}

int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (options.out_dir.empty()) throw UsageError("--out is required");
        SyntheticSpec spec;
        if (options.spec_path.empty()) {
            spec = default_spec();
        } else {
            require_file(options.spec_path, "spec");
            std::ifstream in(options.spec_path);
            spec = parse_synthetic_spec(in);
        }
        if (options.seed) spec.seed = *options.seed;
        const SyntheticCorpora data = generate(spec);

        fs::create_directories(options.out_dir);
        const OutputLock lock(options.out_dir);
        const fs::path dir(options.out_dir);
        const auto emit = [&](const Corpus& c, const std::string& name) {
            std::ostringstream text;
            write_conll(text, c);
            write_file_atomic((dir / name).string(), text.str());
        };
        emit(data.source, "source.conll");
        emit(data.target_train, "target_train.conll");
        emit(data.target_test, "target_test.conll");
        std::ostringstream spec_text;
        write_synthetic_spec(spec_text, spec);
        write_file_atomic((dir / "spec.txt").string(), spec_text.str());
        out << json{{"source", data.source.size()},
                    {"target_train", data.target_train.size()},
                    {"target_test", data.target_test.size()},
                    {"common_types", spec.overlap_types()}}
                   .dump(2)
            << '\n';
        return kExitOk;
    });
}

int cmd_vocab(const VocabOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (options.corpora.empty()) throw UsageError("at least one --corpus is required");
        if (options.out_dir.empty()) throw UsageError("--out is required");
        DataConfig data;
        data.token_column = options.token_column;
        data.label_column = options.label_column;
        data.max_length = std::numeric_limits<int>::max();
        std::vector<Corpus> corpora;
        for (const auto& path : options.corpora) {
            require_file(path, "corpus");
            corpora.push_back(read_corpus(path, data, kSourceDomain, ""));
        }
        std::vector<const Corpus*> ptrs;
        for (const auto& c : corpora) ptrs.push_back(&c);
        if (options.min_word_freq < 1) throw UsageError("--min-freq must be >= 1");
        const Vocabulary vocab = Vocabulary::build(ptrs, options.min_word_freq);
        fs::create_directories(options.out_dir);
        const OutputLock lock(options.out_dir);
        std::ostringstream words, chars;
        vocab.save_words(words);
        vocab.save_chars(chars);
        write_file_atomic((fs::path(options.out_dir) / "words.txt").string(), words.str());
        write_file_atomic((fs::path(options.out_dir) / "chars.txt").string(), chars.str());
        out << json{{"words", vocab.word_size()}, {"chars", vocab.char_size()}}.dump(2) << '\n';
        return kExitOk;
    });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised cross-domain sequence labeling with disentangled latents"};
    app.require_subcommand(1);

    TrainOptions train;
    auto* c_train = app.add_subcommand("train", "Train a model (disentangled or a baseline mode)");
    c_train->add_option("--config", train.config_path, "INI run configuration");
    c_train->add_option("--set", train.overrides, "Override, section.key=value (repeatable)");
    c_train->add_option("--resume", train.resume_path,
                        "Continue from a checkpoint; its training settings replace the config's");

    EvalOptions eval;
    std::string types;
    auto* c_eval = app.add_subcommand("eval", "Entity-level scores of a checkpoint on a labeled corpus");
    c_eval->add_option("--checkpoint", eval.checkpoint)->required();
    c_eval->add_option("--test", eval.test)->required();
    c_eval->add_option("--types", types, "Comma-separated common entity types");
    c_eval->add_flag("--constrained", eval.constrained, "Forbid invalid BIO transitions when decoding");
    c_eval->add_option("--dump", eval.dump_path, "Write 'token gold pred' lines here");
    c_eval->add_option("--token-column", eval.token_column);
    c_eval->add_option("--label-column", eval.label_column);

    PredictOptions pred;
    auto* c_pred = app.add_subcommand("predict", "Tag a token file with the target-domain head");
    c_pred->add_option("--checkpoint", pred.checkpoint)->required();
    c_pred->add_option("--input", pred.input)->required();
    c_pred->add_option("--output", pred.output);
    c_pred->add_flag("--constrained", pred.constrained, "Forbid invalid BIO transitions when decoding");
    c_pred->add_option("--token-column", pred.token_column);

    ProbeOptions probe;
    auto* c_probe = app.add_subcommand("probe", "Domain probes on pooled z and v, plus MI estimates");
    c_probe->add_option("--checkpoint", probe.checkpoint)->required();
    c_probe->add_option("--corpus", probe.corpus, "Mixed-domain file with a domain column");
    c_probe->add_option("--domain-column", probe.domain_column);
    c_probe->add_option("--token-column", probe.token_column);
    c_probe->add_option("--source", probe.source, "Source-domain token file");
    c_probe->add_option("--target", probe.target, "Target-domain token file");
    c_probe->add_option("--probe-seed", probe.probe_seed);
    c_probe->add_option("--mi-steps", probe.mi_steps)->check(CLI::PositiveNumber);

    SynthOptions synth;
    std::uint64_t synth_seed = 0;
    auto* c_synth = app.add_subcommand("synth", "Write a synthetic two-domain benchmark as CoNLL files");
    c_synth->add_option("--spec", synth.spec_path, "Benchmark spec file (default: built-in benchmark)");
    auto* seed_opt = c_synth->add_option("--seed", synth_seed);
    c_synth->add_option("--out", synth.out_dir)->required();

    VocabOptions vocab;
    auto* c_vocab = app.add_subcommand("vocab", "Build word and character vocabularies");
    c_vocab->add_option("--corpus", vocab.corpora)->required();
    c_vocab->add_option("--min-freq", vocab.min_word_freq);
    c_vocab->add_option("--token-column", vocab.token_column);
    c_vocab->add_option("--label-column", vocab.label_column);
    c_vocab->add_option("--out", vocab.out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    if (c_train->parsed()) return cmd_train(train, out, err);
    if (c_eval->parsed()) {
        std::stringstream list(types);
        std::string t;
        while (std::getline(list, t, ',')) {
            if (!t.empty()) eval.common_types.push_back(t);
        }
        if (!types.empty() && eval.common_types.empty()) {
            err << "error: --types names no entity type\n";
            return kExitUsage;
        }
        return cmd_eval(eval, out, err);
    }
    if (c_pred->parsed()) return cmd_predict(pred, out, err);
    if (c_probe->parsed()) return cmd_probe(probe, out, err);
    if (c_synth->parsed()) {
        if (seed_opt->count() > 0) synth.seed = synth_seed;
        return cmd_synth(synth, out, err);
    }
    if (c_vocab->parsed()) return cmd_vocab(vocab, out, err);
    return kExitUsage;
}

}  // namespace ssd::cli
