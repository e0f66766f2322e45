#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <sys/wait.h>

#include <json.hpp>

#include "helpers.hpp"
#include "quotestorm/simulate.hpp"

namespace fs = std::filesystem;
using qs_test::read_file;
using qs_test::write_file;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
    std::string cmd = "env -u QUOTESTORM_SEED " + env + " '" + std::string(QUOTESTORM_CLI_PATH) + "' " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
    int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kSmall =
    "--n-stocks 3 --n-days 80 --dim 12 --n-clusters 3 --n-noise-words 30 --quiet-min 1 --quiet-max 3 --busy-min 2 "
    "--busy-max 4 --window 2";

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(read_file(dir / "manifest.json")); }

// One generated dataset and trained checkpoints shared by the pipeline tests.
struct Pipeline {
    fs::path root, data, ckpt;
    Pipeline() {
        root = qs_test::temp_dir("cli_pipeline");
        data = root / "data";
        ckpt = root / "ckpt";
        Run g = run("gen-data --out " + q(data) + " " + kSmall);
        REQUIRE_MESSAGE(g.code == 0, g.output);
        Run t = run("train --data " + q(data) + " --out " + q(ckpt) + " --victim all --epochs 4 --hidden 8 --window 2");
        REQUIRE_MESSAGE(t.code == 0, t.output);
    }
};

Pipeline& pipeline() {
    static Pipeline p;
    return p;
}

std::string attack_args(const Pipeline& p, const fs::path& out) {
    return "attack --data " + q(p.data) + " --checkpoints " + q(p.ckpt) + " --out " + q(out) +
           " --window 2 --n-u 3 --iterations 4 --max-instances 10";
}

}  // namespace

TEST_CASE("help lists every flag with its default") {
    Run top = run("--help");
    CHECK(top.code == 0);
    for (const char* s : {"gen-data", "train", "attack", "simulate", "report", "--seed", "--jobs", "--config"})
        CHECK_MESSAGE(top.output.find(s) != std::string::npos, s);

    Run tr = run("train --help");
    CHECK(tr.code == 0);
    for (const char* s : {"--data", "--victim", "--lr", "--epochs", "--batch-size", "--beta1", "--beta2", "--hidden",
                          "--holdout-fraction", "--window"})
        CHECK_MESSAGE(tr.output.find(s) != std::string::npos, s);
    CHECK(tr.output.find("[100]") != std::string::npos);
    CHECK(tr.output.find("[0.005]") != std::string::npos);
    CHECK(tr.output.find("[fingru]") != std::string::npos);

    Run at = run("attack --help");
    CHECK(at.code == 0);
    for (const char* s : {"--solver", "--budget", "--mode", "--kind", "--n-u", "--iterations", "--eta-m", "--eta-z",
                          "--eta-u", "--lambda", "--smoothing", "--sigma", "--samples", "--ago-u-steps", "--max-size"})
        CHECK_MESSAGE(at.output.find(s) != std::string::npos, s);
    CHECK(at.output.find("[jo]") != std::string::npos);
    CHECK(at.output.find("[1,1]") != std::string::npos);

    Run gd = run("gen-data --help");
    CHECK(gd.code == 0);
    for (const char* s : {"--out", "--force", "--n-stocks", "--n-days", "--signal-strength", "--dim"})
        CHECK_MESSAGE(gd.output.find(s) != std::string::npos, s);
    CHECK(gd.output.find("[300]") != std::string::npos);

    Run sm = run("simulate --help");
    CHECK(sm.code == 0);
    CHECK(sm.output.find("--transaction-cost") != std::string::npos);
    CHECK(sm.output.find("[10000]") != std::string::npos);
    CHECK(run("report --help").code == 0);
}

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("train --epochs notanumber").code == 2);
    auto dir = qs_test::temp_dir("cli_usage");
    CHECK(run("train --data " + q(dir / "missing")).code == 2);
    CHECK(run("attack --data " + q(dir / "missing") + " --out " + q(dir / "o")).code == 2);
    CHECK(run("gen-data --out " + q(dir / "d") + " --signal-strength 2").code == 2);
    CHECK(run("gen-data --out " + q(dir / "d") + " --jobs 0").code == 2);
    write_file(dir / "bad.json", "{\"gen-data.no-such-flag\": 1}");
    CHECK(run("--config " + q(dir / "bad.json") + " gen-data --out " + q(dir / "d")).code == 2);
    write_file(dir / "typed.json", "{\"gen-data.n-stocks\": \"many\"}");
    CHECK(run("--config " + q(dir / "typed.json") + " gen-data --out " + q(dir / "d")).code == 2);
    CHECK(run("--config " + q(dir / "nope.json") + " gen-data --out " + q(dir / "d")).code == 2);
    CHECK(run("--seed 1 gen-data --out " + q(dir / "d"), "QUOTESTORM_SEED=abc").code == 0);
    CHECK(run("gen-data --force --out " + q(dir / "d"), "QUOTESTORM_SEED=abc").code == 2);
}

TEST_CASE("gen-data is deterministic and refuses to overwrite") {
    auto dir = qs_test::temp_dir("cli_gen");
    REQUIRE(run("gen-data --out " + q(dir / "a") + " " + kSmall).code == 0);
    REQUIRE(run("gen-data --out " + q(dir / "b") + " " + kSmall).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        auto rel = fs::relative(e.path(), dir / "a");
        CHECK_MESSAGE(read_file(e.path()) == read_file(dir / "b" / rel), rel.string());
    }
    CHECK(files > 3);
    auto m = manifest(dir / "a");
    CHECK(m["seed"] == 42);
    CHECK(m["synth"]["n_stocks"] == 3);
    CHECK(m["counts"]["instances"].get<int>() > 0);

    Run again = run("gen-data --out " + q(dir / "a") + " " + kSmall);
    CHECK(again.code == 2);
    CHECK(again.output.find("force") != std::string::npos);
    CHECK(run("--seed 3 gen-data --force --out " + q(dir / "a") + " " + kSmall).code == 0);
    CHECK(manifest(dir / "a")["seed"] == 3);
}

TEST_CASE("gen-data with 8 stocks and 300 days yields at least 1500 instances") {
    auto dir = qs_test::temp_dir("cli_count");
    REQUIRE(run("gen-data --out " + q(dir / "d") + " --n-stocks 8 --n-days 300").code == 0);
    auto m = manifest(dir / "d");
    int n = m["counts"]["instances"].get<int>();
    CHECK(n >= 1500);
    CHECK(n == 2163);
}

TEST_CASE("seed precedence: config file < QUOTESTORM_SEED < --seed") {
    auto dir = qs_test::temp_dir("cli_seed");
    write_file(dir / "cfg.json", "{\"seed\": 7, \"gen-data.n-stocks\": 2, \"train.epochs\": 3}");
    std::string base = "--config " + q(dir / "cfg.json") + " ";
    REQUIRE(run(base + "gen-data --out " + q(dir / "a") + " " + kSmall.substr(kSmall.find("--n-days"))).code == 0);
    CHECK(manifest(dir / "a")["seed"] == 7);
    CHECK(manifest(dir / "a")["synth"]["n_stocks"] == 2);

    REQUIRE(run(base + "gen-data --out " + q(dir / "b") + " --n-stocks 3", "QUOTESTORM_SEED=9").code == 0);
    CHECK(manifest(dir / "b")["seed"] == 9);
    CHECK(manifest(dir / "b")["synth"]["n_stocks"] == 3);

    REQUIRE(run(base + "--seed 11 gen-data --out " + q(dir / "c"), "QUOTESTORM_SEED=9").code == 0);
    CHECK(manifest(dir / "c")["seed"] == 11);
}

TEST_CASE("train writes checkpoints and a report for every victim") {
    auto& p = pipeline();
    for (const char* v : {"bag", "fingru", "finlstm"}) CHECK(fs::exists(p.ckpt / (std::string(v) + ".json")));
    auto report = nlohmann::json::parse(read_file(p.ckpt / "train_report.json"));
    for (const char* v : {"bag", "fingru", "finlstm"}) {
        REQUIRE(report.contains(v));
        double acc = report[v]["test"]["accuracy"].get<double>();
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
    CHECK(run("train --data " + q(p.data) + " --out " + q(p.root / "x") + " --victim lstm2").code == 2);
}

TEST_CASE("attack, simulate and report pipeline") {
    auto& p = pipeline();
    fs::path out = p.root / "attack";
    Run a = run(attack_args(p, out) + " --victim fingru --solver ra,jo,ago --budget 1,1 --budget 2,2");
    REQUIRE_MESSAGE(a.code == 0, a.output);
    CHECK(a.output.find("ASR(%)") != std::string::npos);
    for (const char* f : {"metrics.csv", "trajectories.csv", "budget_curves.csv", "results.jsonl",
                          "predictions/benign_fingru.csv", "predictions/fingru_jo_concatenate_replace_1x1_s42.csv"})
        CHECK_MESSAGE(fs::exists(out / f), f);

    std::istringstream lines(read_file(out / "metrics.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 1 + 1 + 3 * 2);

    // the same command again is byte-identical
    fs::path again = p.root / "attack_again";
    REQUIRE(run(attack_args(p, again) + " --victim fingru --solver ra,jo,ago --budget 1,1 --budget 2,2 --jobs 1").code == 0);
    CHECK(read_file(out / "metrics.csv") == read_file(again / "metrics.csv"));
    CHECK(read_file(out / "results.jsonl") == read_file(again / "results.jsonl"));

    fs::path sim = p.root / "sim";
    Run s1 = run("simulate --data " + q(p.data) + " --benign " + q(out / "predictions/benign_fingru.csv") + " --out " +
                 q(sim / "benign"));
    REQUIRE_MESSAGE(s1.code == 0, s1.output);
    CHECK(fs::exists(sim / "benign" / "pnl_benign.csv"));
    CHECK_FALSE(fs::exists(sim / "benign" / "pnl_attacked.csv"));

    Run s2 = run("simulate --data " + q(p.data) + " --benign " + q(out / "predictions/benign_fingru.csv") + " --attacked " +
                 q(out / "predictions/fingru_jo_concatenate_replace_1x1_s42.csv") + " --out " + q(sim / "both"));
    REQUIRE_MESSAGE(s2.code == 0, s2.output);
    auto summary = nlohmann::json::parse(read_file(sim / "both" / "pnl_summary.json"));
    CHECK(summary.contains("delta"));
    CHECK(summary["delta"].get<double>() ==
          doctest::Approx(summary["attacked"]["terminal_value"].get<double>() -
                          summary["benign"]["terminal_value"].get<double>()));
    CHECK(summary["benign"]["net_value_pct"][0] == 100.0);

    Run s3 = run("simulate --data " + q(p.data) + " --benign " + q(out / "predictions/benign_fingru.csv") + " --out " +
                 q(sim / "cost") + " --transaction-cost 0.001");
    REQUIRE(s3.code == 0);
    auto free_run = nlohmann::json::parse(read_file(sim / "benign" / "pnl_summary.json"));
    auto cost_run = nlohmann::json::parse(read_file(sim / "cost" / "pnl_summary.json"));
    CHECK(cost_run["transaction_cost"] == 0.001);
    if (free_run["benign"]["trade_count"].get<int>() > 0)
        CHECK(cost_run["benign"]["terminal_value"].get<double>() < free_run["benign"]["terminal_value"].get<double>());

    // attacked file covering fewer keys
    auto preds = quotestorm::read_predictions_csv((out / "predictions/benign_fingru.csv").string());
    preds.erase(preds.begin());
    quotestorm::write_predictions_csv((p.root / "short.csv").string(), preds);
    CHECK(run("simulate --data " + q(p.data) + " --benign " + q(out / "predictions/benign_fingru.csv") + " --attacked " +
              q(p.root / "short.csv") + " --out " + q(sim / "bad"))
              .code == 2);

    Run rep = run("report --in " + q(out));
    CHECK(rep.code == 0);
    CHECK(rep.output.find("ASR(%)") != std::string::npos);
    CHECK(read_file(out / "REPORT.md").find("mean_queries") != std::string::npos);
}

TEST_CASE("attack: brute force, deletion and manipulation configs") {
    auto& p = pipeline();
    fs::path out = p.root / "attack_kinds";
    Run a = run(attack_args(p, out) +
                " --victim bag --solver brute --solver jo --kind replace,delete --mode concatenate,manipulate --max-size 10000");
    REQUIRE_MESSAGE(a.code == 0, a.output);
    std::string metrics = read_file(out / "metrics.csv");
    for (const char* k : {"bag/brute/concatenate/replace/1x1/s42", "bag/jo/manipulate/delete/1x1/s42",
                          "bag/na/none/none/0x0/s0"})
        CHECK_MESSAGE(metrics.find(k) != std::string::npos, k);
    CHECK(run(attack_args(p, p.root / "x") + " --solver greedy").code == 2);
    CHECK(run(attack_args(p, p.root / "x") + " --budget 0,1").code == 2);
    CHECK(run(attack_args(p, p.root / "x") + " --checkpoints " + q(p.root / "none")).code == 2);
}

TEST_CASE("checkpoints from another vocabulary are rejected") {
    auto& p = pipeline();
    fs::path other = p.root / "other";
    REQUIRE(run("gen-data --out " + q(other) + " --n-stocks 3 --n-days 80 --dim 12 --n-clusters 3 --n-noise-words 31 --window 2").code == 0);
    Run a = run("attack --data " + q(other) + " --checkpoints " + q(p.ckpt) + " --out " + q(p.root / "mismatch") +
                " --window 2 --n-u 3 --max-instances 2");
    CHECK(a.code == 2);
    CHECK(a.output.find("vocab") != std::string::npos);
}
