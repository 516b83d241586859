#include "commands.hpp"

#include "ssd/checkpoint.hpp"
#include "ssd/evaluator.hpp"

#include <catch_amalgamated.hpp>

#include "json.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result ssd_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "ssd");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = ssd::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

/// Fresh scratch directory removed when the test ends.
struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "ssd-cli-XXXXXX").string();
        path = ::mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ignored;
        fs::remove_all(path, ignored);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& text) {
    std::ofstream(path) << text;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Small dimensions so training takes a fraction of a second.
const std::vector<std::string> kTiny = {
    "--set", "model.word_dim=8",        "--set", "model.char_dim=4",     "--set", "model.char_filters=6",
    "--set", "model.hidden=8",          "--set", "model.heads=2",        "--set", "model.head_dim=4",
    "--set", "model.decoder_hidden=8",  "--set", "model.critic_hidden=8", "--set", "trainer.batch_size=8",
};

std::vector<std::string> train_args(const TempDir& dir, std::vector<std::string> extra) {
    std::vector<std::string> a = {"train", "--set", "data.source=" + dir / "data/source.conll", "--set",
                                  "data.target=" + dir / "data/target_train.conll", "--set",
                                  "output.dir=" + dir / "run"};
    a.insert(a.end(), kTiny.begin(), kTiny.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
}

/// Writes a reduced benchmark under dir/data.
void small_benchmark(const TempDir& dir) {
    REQUIRE(ssd_cli({"synth", "--out", dir / "full"}).code == 0);
    std::string spec = slurp(dir / "full/spec.txt");
    std::ostringstream edited;
    std::istringstream lines(spec);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("source_sentences", 0) == 0) line = "source_sentences = 60";
        if (line.rfind("target_train_sentences", 0) == 0) line = "target_train_sentences = 30";
        if (line.rfind("target_test_sentences", 0) == 0) line = "target_test_sentences = 20";
        edited << line << '\n';
    }
    write(dir / "spec.txt", edited.str());
    REQUIRE(ssd_cli({"synth", "--spec", dir / "spec.txt", "--out", dir / "data"}).code == 0);
}

std::vector<std::string> metric_lines(const std::string& path) {
    std::vector<std::string> out;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

}  // namespace

TEST_CASE("synth writes the benchmark files", "[cli]") {
    TempDir dir;
    const Result r = ssd_cli({"synth", "--out", dir / "b", "--seed", "4"});
    REQUIRE(r.code == 0);
    const json summary = json::parse(r.out);
    CHECK(summary["source"] == 2000);
    CHECK(summary["target_train"] == 200);
    CHECK(summary["target_test"] == 500);
    CHECK(summary["common_types"] == json::array({"PER"}));
    for (const char* f : {"source.conll", "target_train.conll", "target_test.conll", "spec.txt"}) {
        CHECK(fs::is_regular_file(dir.path / "b" / f));
    }
    CHECK_FALSE(fs::exists(dir.path / "b" / ".lock"));
    REQUIRE(ssd_cli({"synth", "--out", dir / "c", "--seed", "4"}).code == 0);
    CHECK(slurp(dir / "b/target_test.conll") == slurp(dir / "c/target_test.conll"));
}

TEST_CASE("vocab counts words and characters", "[cli]") {
    TempDir dir;
    write(dir / "a.conll", "the O\nAcme B-ORG\n\nthe O\nrose O\n");
    const Result r = ssd_cli({"vocab", "--corpus", dir / "a.conll", "--out", dir / "v"});
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["words"] == 2 + 3);
    CHECK(fs::is_regular_file(dir.path / "v" / "words.txt"));
    CHECK(ssd_cli({"vocab", "--corpus", dir / "missing.conll", "--out", dir / "v"}).code == 2);
}

TEST_CASE("usage errors exit with status 2", "[cli]") {
    CHECK(ssd_cli({}).code == 2);
    CHECK(ssd_cli({"frobnicate"}).code == 2);
    CHECK(ssd_cli({"eval", "--checkpoint", "x"}).code == 2);
    CHECK(ssd_cli({"--help"}).code == 0);
}

TEST_CASE("train rejects a missing corpus before creating anything", "[cli]") {
    TempDir dir;
    const Result r = ssd_cli({"train", "--set", "data.source=" + dir / "nope.conll", "--set",
                              "data.target=" + dir / "nope2.conll", "--set", "output.dir=" + dir / "out"});
    CHECK(r.code == 2);
    CHECK(r.err.find("not found") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "out"));

    write(dir / "t.conll", "a O\n");
    CHECK(ssd_cli({"train", "--set", "data.target=" + dir / "t.conll", "--set", "trainer.K_i=0", "--set",
                   "output.dir=" + dir / "out"})
              .code == 2);
    CHECK(ssd_cli({"train", "--set", "trainer.bogus=1"}).code == 2);
    CHECK_FALSE(fs::exists(dir.path / "out"));
}

TEST_CASE("train with an override runs and records the effective config", "[cli]") {
    TempDir dir;
    small_benchmark(dir);
    write(dir / "run.cfg", "[trainer]\nK_p = 2\nK_m = 1\nK_i = 5\n");
    auto args = train_args(dir, {"--config", dir / "run.cfg", "--set", "trainer.K_i=2"});
    const Result r = ssd_cli(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    const json summary = json::parse(r.out);
    CHECK(summary["mode"] == "ssd");
    CHECK(summary["steps"] == 2 + 2 * (1 + 2));
    const ssd::CheckpointData ck = ssd::load_checkpoint(dir / "run/model.ckpt");
    CHECK(ck.training.k_i == 2);
    CHECK(ck.config_text.find("K_i = 2") != std::string::npos);
    CHECK(slurp(dir / "run/config.ini") == ck.config_text);

    const auto lines = metric_lines(dir / "run/metrics.ndjson");
    CHECK_FALSE(lines.empty());
    std::set<std::string> phases;
    for (const auto& l : lines) phases.insert(json::parse(l)["phase"].get<std::string>());
    CHECK(phases == std::set<std::string>{"critic", "model", "pretrain"});
    CHECK_FALSE(fs::exists(dir.path / "run" / ".lock"));
}

TEST_CASE("eval scores a memorized training set perfectly", "[cli]") {
    TempDir dir;
    write(dir / "t.conll",
          "Ada B-PER\nLovelace I-PER\nwrote O\nnotes O\n.\tO\n\n"
          "the O\nAcme B-ORG\nplant O\nclosed O\n\n"
          "Ada B-PER\njoined O\nAcme B-ORG\n\n"
          "notes O\nfrom O\nBoston B-LOC\n\n");
    const Result r = ssd_cli({"train", "--set", "data.target=" + dir / "t.conll", "--set", "trainer.mode=in_domain",
                              "--set", "trainer.baseline_steps=300", "--set", "trainer.learning_rate=0.01", "--set",
                              "trainer.dropout=0", "--set", "output.dir=" + dir / "mem", "--set", "model.word_dim=8",
                              "--set", "model.char_filters=6", "--set", "model.char_dim=4", "--set", "model.hidden=8",
                              "--set", "model.heads=2", "--set", "model.head_dim=4"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const std::string ckpt = dir / "mem/model.ckpt";

    const Result e = ssd_cli({"eval", "--checkpoint", ckpt, "--test", dir / "t.conll", "--dump", dir / "dump.txt"});
    INFO(e.err);
    REQUIRE(e.code == 0);
    const ssd::EvalReport report = ssd::parse_report_json(e.out.substr(0, e.out.size() - 1));
    CHECK(report.f1 == 1.0);
    CHECK(report.counts.gold == 5);
    CHECK(ssd::report_json(report) + "\n" == e.out);
    CHECK(slurp(dir / "dump.txt").find("Boston B-LOC B-LOC\n") != std::string::npos);

    const Result split = ssd_cli({"eval", "--checkpoint", ckpt, "--test", dir / "t.conll", "--types", "PER,LOC"});
    REQUIRE(split.code == 0);
    const ssd::EvalReport s = ssd::parse_report_json(split.out.substr(0, split.out.size() - 1));
    REQUIRE(s.common);
    REQUIRE(s.non_common);
    CHECK(s.common->counts.gold == 3);

    const Result unknown = ssd_cli({"eval", "--checkpoint", ckpt, "--test", dir / "t.conll", "--types", "PER,GENE"});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("GENE") != std::string::npos);
    CHECK(ssd_cli({"eval", "--checkpoint", dir / "none.ckpt", "--test", dir / "t.conll"}).code == 2);

    SECTION("predict") {
        write(dir / "empty.txt", "");
        const Result none = ssd_cli({"predict", "--checkpoint", ckpt, "--input", dir / "empty.txt"});
        CHECK(none.code == 0);
        CHECK(none.out.empty());

        write(dir / "in.txt", "Ada\njoined\nAcme\n\nunseen\nwords\nhere\n.\n");
        const Result p = ssd_cli({"predict", "--checkpoint", ckpt, "--input", dir / "in.txt"});
        REQUIRE(p.code == 0);
        CHECK(std::count(p.out.begin(), p.out.end(), '\n') == 3 + 1 + 4 + 1);
        CHECK(p.out.rfind("Ada\tB-PER\njoined\tO\nAcme\tB-ORG\n\n", 0) == 0);
        REQUIRE(ssd_cli({"predict", "--checkpoint", ckpt, "--input", dir / "in.txt", "--output", dir / "o.txt"})
                    .code == 0);
        CHECK(slurp(dir / "o.txt") == p.out);
    }
}

TEST_CASE("probe reports both accuracies and is seeded", "[cli]") {
    TempDir dir;
    small_benchmark(dir);
    REQUIRE(ssd_cli(train_args(dir, {"--set", "trainer.K_p=1", "--set", "trainer.K_m=1", "--set", "trainer.K_i=1"}))
                .code == 0);
    const std::string ckpt = dir / "run/model.ckpt";

    // one domain's sentences with domain labels assigned at random: nothing to find
    std::istringstream in(slurp(dir / "full/source.conll"));
    std::ostringstream mixed;
    std::string line;
    std::uint64_t state = 12345;
    int label = 0;
    bool fresh = true;
    int sentences = 0;
    while (std::getline(in, line) && sentences < 240) {
        if (line.empty()) {
            mixed << '\n';
            fresh = true;
            ++sentences;
            continue;
        }
        if (fresh) {
            state = state * 6364136223846793005ULL + 1442695040888963407ULL;
            label = static_cast<int>(state >> 63);
            fresh = false;
        }
        std::istringstream f(line);
        std::string tok, tag;
        f >> tok >> tag;
        mixed << tok << ' ' << tag << ' ' << label << '\n';
    }
    write(dir / "mixed.txt", mixed.str());

    const std::vector<std::string> args = {"probe", "--checkpoint", ckpt, "--corpus", dir / "mixed.txt",
                                           "--probe-seed", "7", "--mi-steps", "20"};
    const Result a = ssd_cli(args);
    INFO(a.err);
    REQUIRE(a.code == 0);
    const json j = json::parse(a.out);
    REQUIRE(j.contains("probe_z_accuracy"));
    REQUIRE(j.contains("probe_v_accuracy"));
    REQUIRE(j.contains("mi_estimates"));
    for (const char* k : {"z_v", "w_z", "w_v"}) CHECK(j["mi_estimates"].contains(k));
    CHECK(std::abs(j["probe_z_accuracy"].get<double>() - 0.5) <= 0.2);
    CHECK(std::abs(j["probe_v_accuracy"].get<double>() - 0.5) <= 0.2);
    CHECK(ssd_cli(args).out == a.out);

    const Result split = ssd_cli({"probe", "--checkpoint", ckpt, "--source", dir / "data/source.conll", "--target",
                                  dir / "data/target_train.conll", "--mi-steps", "5"});
    CHECK(split.code == 0);
    CHECK(ssd_cli({"probe", "--checkpoint", ckpt, "--corpus", dir / "mixed.txt", "--source", dir / "mixed.txt"})
              .code == 2);
}

TEST_CASE("the installed executable follows the exit-code contract", "[cli]") {
    const char* exe = std::getenv("SSD_CLI");
    if (exe == nullptr) SKIP("SSD_CLI not set");
    const std::string quiet = " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system((std::string(exe) + " --help" + quiet).c_str())) == 0);
    CHECK(WEXITSTATUS(std::system((std::string(exe) + " train --set nope" + quiet).c_str())) == 2);
    CHECK(WEXITSTATUS(std::system((std::string(exe) + " predict" + quiet).c_str())) == 2);
}
