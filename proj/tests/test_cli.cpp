#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vtck/config.hpp"
#include "vtck/container.hpp"
#include "vtck/lora.hpp"

using namespace vtck;
namespace fs = std::filesystem;

namespace {

// Every test works in its own scratch dir under the system temp dir.
struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("vtck_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string path(const std::string& f) const { return (dir / f).string(); }
};

std::string vtck_bin() {
    const char* env = std::getenv("VTCK_BIN");
    return env && *env ? env : "./vtck";
}

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

RunResult run(const std::string& args, const Scratch& scratch) {
    const std::string out_file = scratch.path("cmd_output.txt");
    const std::string cmd = vtck_bin() + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream f(out_file);
    std::string output((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return {WEXITSTATUS(status), std::move(output)};
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_small_config(const std::string& path) {
    std::ofstream f(path);
    f << R"({
  "model":   {"hidden": 32, "blocks": 1, "heads": 2},
  "corpus":  {"train_speakers": 3, "heldout_speakers": 1, "utterances_per_speaker": 3,
              "frames_per_utterance": 24, "seed": 777},
  "pretrain": {"iterations": 12, "batch_size": 4, "lr": 1e-3}
})";
}

}  // namespace

TEST_CASE("missing config file exits 2 with a clear message") {
    Scratch s("missing_config");
    auto r = run("pretrain --config " + s.path("nope.json") + " --out " + s.path("x.vtck"), s);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("config not found") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected by name") {
    Scratch s("bad_key");
    {
        std::ofstream f(s.path("bad.json"));
        f << R"({"model": {"hiden": 32}})";
    }
    auto r = run("pretrain --config " + s.path("bad.json") + " --out " + s.path("x.vtck"), s);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("model.hiden") != std::string::npos);
}

TEST_CASE("run config defaults match the adopted setup") {
    RunConfig rc = parse_run_config("{}");
    CHECK(rc.lora_rank == 16);
    CHECK(rc.lora_alpha == 8.0);
    CHECK(rc.finetune_lr == 1e-4);
    CHECK(rc.finetune_iterations == 500);
    CHECK(rc.strategy == GuidanceKind::kEmbedCfg);
    CHECK(rc.gamma == 1.0);
    CHECK(rc.dt == 0.02);
    CHECK(rc.uncond_prob == 0.25);
    CHECK(rc.batch_size == 16);
    CHECK(rc.beta0 == 0.05);
    CHECK(rc.beta1 == 20.0);
    CHECK(rc.lora_targets == LoraTargets::kAttention);
    // and the dumped form parses back to the same thing
    RunConfig again = parse_run_config(dump_run_config(rc));
    CHECK(again.lora_rank == rc.lora_rank);
    CHECK(again.dt == rc.dt);
}

TEST_CASE("pipeline commands are bit-reproducible under a fixed seed") {
    Scratch s("determinism");
    write_small_config(s.path("cfg.json"));

    // corpus
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c1"), s).exit_code == 0);
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c2"), s).exit_code == 0);
    CHECK(read_bytes(s.path("c1/manifest.tsv")) == read_bytes(s.path("c2/manifest.tsv")));
    CHECK(read_bytes(s.path("c1/utt_s0_0.vtck")) == read_bytes(s.path("c2/utt_s0_0.vtck")));

    // pretrain
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b1.vtck") + " --seed 5", s)
                .exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b2.vtck") + " --seed 5", s)
                .exit_code == 0);
    CHECK(read_bytes(s.path("b1.vtck")) == read_bytes(s.path("b2.vtck")));
    CHECK(read_bytes(s.path("b1.vtck.log")) == read_bytes(s.path("b2.vtck.log")));

    const std::string ref = s.path("c1/utt_s3_0.vtck");
    const std::string ft_common = "finetune --base " + s.path("b1.vtck") + " --ref " + ref +
                                  " --rank 2 --iters 8 --lr 1e-3 --seed 3 --adapter-out ";
    REQUIRE(run(ft_common + s.path("a1.vtck"), s).exit_code == 0);
    REQUIRE(run(ft_common + s.path("a2.vtck"), s).exit_code == 0);
    CHECK(read_bytes(s.path("a1.vtck")) == read_bytes(s.path("a2.vtck")));

    const std::string tokens(24, '3');
    const std::string sm_common = "sample --base " + s.path("b1.vtck") + " --adapter " + s.path("a1.vtck") +
                                  " --text-tokens " + tokens + " --speaker " + ref + " --seed 9 --out ";
    REQUIRE(run(sm_common + s.path("m1.vtck"), s).exit_code == 0);
    REQUIRE(run(sm_common + s.path("m2.vtck"), s).exit_code == 0);
    CHECK(read_bytes(s.path("m1.vtck")) == read_bytes(s.path("m2.vtck")));

    // analyze (records) and eval (tsv)
    const std::string an_common = "analyze --before " + s.path("b1.vtck") + " --after " + s.path("b2.vtck") +
                                  " --records ";
    REQUIRE(run(an_common + s.path("r1.txt"), s).exit_code == 0);
    REQUIRE(run(an_common + s.path("r2.txt"), s).exit_code == 0);
    CHECK(read_bytes(s.path("r1.txt")) == read_bytes(s.path("r2.txt")));

    const std::string ev_common = "eval --base " + s.path("b1.vtck") + " --adapter " + s.path("a1.vtck") +
                                  " --corpus " + s.path("c1/manifest.tsv") +
                                  " --n 1 --sentences 1 --dt 0.1 --seed 4 --out ";
    REQUIRE(run(ev_common + s.path("e1.tsv"), s).exit_code == 0);
    REQUIRE(run(ev_common + s.path("e2.tsv"), s).exit_code == 0);
    CHECK(read_bytes(s.path("e1.tsv")) == read_bytes(s.path("e2.tsv")));
}

TEST_CASE("adapter files scale linearly with rank") {
    Scratch s("rank_scaling");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    const std::string common = "finetune --base " + s.path("b.vtck") + " --ref " + s.path("c/utt_s3_0.vtck") +
                               " --iters 0 --adapter-out ";
    REQUIRE(run(common + s.path("r8.vtck") + " --rank 8", s).exit_code == 0);
    REQUIRE(run(common + s.path("r16.vtck") + " --rank 16", s).exit_code == 0);

    // payload doubles; headers/padding stay within a couple of KB
    const auto size8 = static_cast<int64_t>(fs::file_size(s.path("r8.vtck")));
    const auto size16 = static_cast<int64_t>(fs::file_size(s.path("r16.vtck")));
    auto a8 = adapters_from_container(load_container(s.path("r8.vtck")));
    auto a16 = adapters_from_container(load_container(s.path("r16.vtck")));
    CHECK(a16.trainable_params() == 2 * a8.trainable_params());
    CHECK(std::abs((size16 - 2 * size8)) < size8);
    CHECK(size16 > size8);
}

TEST_CASE("alpha-boost combined with gamma is a usage error") {
    Scratch s("boost_gamma");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    const std::string ref = s.path("c/utt_s3_0.vtck");
    REQUIRE(run("finetune --base " + s.path("b.vtck") + " --ref " + ref +
                    " --rank 2 --iters 0 --adapter-out " + s.path("a.vtck"),
                s)
                .exit_code == 0);
    // boost is exclusive: no gamma allowed on top of an alpha override
    auto r = run("eval --base " + s.path("b.vtck") + " --adapter " + s.path("a.vtck") + " --corpus " +
                     s.path("c/manifest.tsv") + " --strategy alpha-boost --alpha-infer 16 --gamma 1 " +
                     "--n 1 --sentences 1 --dt 0.5",
                 s);
    // gamma is zeroed for boost by the CLI; combining explicitly via sample:
    CHECK(r.exit_code == 0);

    auto r2 = run("sample --base " + s.path("b.vtck") + " --adapter " + s.path("a.vtck") +
                      " --strategy embed-cfg --alpha-infer 16 --text-tokens 000111 --speaker " + ref +
                      " --out " + s.path("m.vtck"),
                  s);
    CHECK(r2.exit_code == 2);
    CHECK(r2.output.find("compose") != std::string::npos);
}

TEST_CASE("corrupted containers are rejected with a distinct exit code") {
    Scratch s("corrupt");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    std::string bytes = read_bytes(s.path("b.vtck"));
    bytes[0] = 'X';
    {
        std::ofstream f(s.path("bad.vtck"), std::ios::binary);
        f << bytes;
    }
    auto r = run("analyze --before " + s.path("bad.vtck") + " --after " + s.path("b.vtck"), s);
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("bad magic") != std::string::npos);
}

TEST_CASE("sample records its generation metadata and honors defaults") {
    Scratch s("sample_meta");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    const std::string tokens(24, '5');
    REQUIRE(run("sample --base " + s.path("b.vtck") + " --text-tokens " + tokens + " --speaker " +
                    s.path("c/utt_s3_0.vtck") + " --out " + s.path("m.vtck") + " --seed 2",
                s)
                .exit_code == 0);
    Container mel = load_container(s.path("m.vtck"));
    CHECK(mel.meta_or("kind", "") == "mel");
    CHECK(mel.meta_or("strategy", "") == "embed-cfg");  // adopted default strategy
    CHECK(std::stod(mel.meta_or("gamma", "-1")) == 1.0);
    CHECK(std::stod(mel.meta_or("dt", "-1")) == 0.02);
    CHECK(mel.meta_or("tokens", "") == tokens);
    CHECK(mel.at("mel").shape() == Shape{24, 16});
}

TEST_CASE("ablation sweeps produce the full grids") {
    Scratch s("sweeps");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    const std::string common = "eval --base " + s.path("b.vtck") + " --corpus " + s.path("c/manifest.tsv") +
                               " --n 1 --sentences 1 --dt 0.25 --seed 6 --out ";

    auto rows_of = [](const std::string& tsv) {
        std::vector<std::string> labels;
        std::istringstream ss(tsv);
        std::string line;
        std::getline(ss, line);  // header
        while (std::getline(ss, line)) labels.push_back(line.substr(0, line.find('\t')));
        return labels;
    };

    auto r = run(common + s.path("strategy.tsv") + " --sweep strategy", s);
    REQUIRE(r.exit_code == 0);
    auto labels = rows_of(read_bytes(s.path("strategy.tsv")));
    REQUIRE(labels.size() == 8);  // none, boost, and gamma {1,2} for the three CFG kinds
    CHECK(labels[0] == "w/o strengthening");
    CHECK(labels[1] == "alpha-boost 2.0x");
    CHECK(labels[2] == "embed-cfg gamma=1");

    r = run(common + s.path("alpha.tsv") + " --sweep alpha", s);
    REQUIRE(r.exit_code == 0);
    labels = rows_of(read_bytes(s.path("alpha.tsv")));
    REQUIRE(labels == std::vector<std::string>{"alpha=1", "alpha=2", "alpha=4", "alpha=8"});

    r = run(common + s.path("lr.tsv") + " --sweep lr-iters", s);
    REQUIRE(r.exit_code == 0);
    labels = rows_of(read_bytes(s.path("lr.tsv")));
    REQUIRE(labels.size() == 4);
    CHECK(labels[0] == "lr=2e-05,iters=500");
    CHECK(labels[3] == "lr=0.0001,iters=2000");

    CHECK(run(common + s.path("x.tsv") + " --sweep bogus", s).exit_code == 2);
}

TEST_CASE("eval defaults to 5 generations per sentence and can show the ceiling") {
    Scratch s("eval_defaults");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    auto r = run("eval --base " + s.path("b.vtck") + " --corpus " + s.path("c/manifest.tsv") +
                     " --sentences 1 --dt 0.5 --ground-truth --out " + s.path("m.tsv"),
                 s);
    REQUIRE(r.exit_code == 0);
    const std::string tsv = read_bytes(s.path("m.tsv"));
    CHECK(tsv.find("ground-truth\t") != std::string::npos);
    // 1 held-out speaker x 1 sentence x default n=5
    CHECK(tsv.find("\t5\n") != std::string::npos);
}

TEST_CASE("finetune defaults follow the adopted setup (rank 16, alpha 8)") {
    Scratch s("ft_defaults");
    write_small_config(s.path("cfg.json"));
    REQUIRE(run("corpus --config " + s.path("cfg.json") + " --out " + s.path("c"), s).exit_code == 0);
    REQUIRE(run("pretrain --config " + s.path("cfg.json") + " --out " + s.path("b.vtck") + " --seed 1", s)
                .exit_code == 0);
    REQUIRE(run("finetune --base " + s.path("b.vtck") + " --ref " + s.path("c/utt_s3_0.vtck") +
                    " --iters 0 --adapter-out " + s.path("a.vtck"),
                s)
                .exit_code == 0);
    auto set = adapters_from_container(load_container(s.path("a.vtck")));
    CHECK(set.rank == 16);
    CHECK(set.alpha == 8.0);
    CHECK(set.targets == LoraTargets::kAttention);
    // 4 attention targets in the 1-block config, r (d + k) each
    CHECK(set.trainable_params() == 4 * 16 * (32 + 32));
}
