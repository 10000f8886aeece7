#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "prefixguard/artifact.hpp"
#include "prefixguard/cli.hpp"
#include "prefixguard/common.hpp"

using namespace prefixguard;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;

  explicit Workspace(const std::string& name) {
    dir = fs::path("/tmp/pg_cli") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string p(const std::string& file) const { return (dir / file).string(); }
};

int cli(const std::vector<std::string>& args) { return run_cli(args); }

void write_monitor_config(const std::string& path, int epochs,
                          std::uint64_t seed) {
  const json cfg = {{"alphabet_size", 6}, {"state_budget", 6},
                    {"symbolizer_hidden", 24}, {"epochs", epochs},
                    {"batch_size", 32}, {"horizon", 3},
                    {"backend", "gru"}, {"seed", seed}};
  write_json_file(path, cfg);
}

// One shared pipeline so the expensive steps run once.
struct Pipeline {
  Workspace ws{"pipeline"};
  Pipeline() {
    const json synth_cfg = {{"trajectory_count", 220}, {"failure_rate", 0.35},
                            {"min_length", 4},         {"max_length", 10},
                            {"injection_window", 4},   {"seed", 5}};
    write_json_file(ws.p("synth.json"), synth_cfg);
    REQUIRE(cli({"synth", "--config", ws.p("synth.json"), "--out",
                 ws.p("corpus.jsonl"), "--adapter-out", ws.p("adapter.json"),
                 "--splits-out", ws.p("splits.json"), "--cal-fraction", "0.15",
                 "--train-ratio", "0.7", "--val-ratio", "0.15", "--test-ratio",
                 "0.15"}) == 0);
    REQUIRE(cli({"convert", "--corpus", ws.p("corpus.jsonl"), "--adapter",
                 ws.p("adapter.json"), "--out", ws.p("stepview.jsonl"),
                 "--report", ws.p("coverage.json")}) == 0);
    write_monitor_config(ws.p("monitor.json"), 24, 7);
    REQUIRE(cli({"train", "--stepview", ws.p("stepview.jsonl"), "--splits",
                 ws.p("splits.json"), "--config", ws.p("monitor.json"),
                 "--out-dir", ws.p("model")}) == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("synth + convert: coverage reports zero fallback") {
  auto& P = pipeline();
  const json coverage = read_json_file(P.ws.p("coverage.json"));
  CHECK(coverage["fallback_rate"].get<double>() == 0.0);
  CHECK(coverage["fill_rates"]["tool"].get<double>() == 1.0);
  CHECK(coverage["fill_rates"]["status"].get<double>() == 1.0);
}

TEST_CASE("convert: rerun is byte-identical") {
  auto& P = pipeline();
  const std::string again = P.ws.p("stepview_again.jsonl");
  REQUIRE(cli({"convert", "--corpus", P.ws.p("corpus.jsonl"), "--adapter",
               P.ws.p("adapter.json"), "--out", again}) == 0);
  CHECK(read_file(again) == read_file(P.ws.p("stepview.jsonl")));
}

TEST_CASE("convert: missing adapter file exits with code 2") {
  auto& P = pipeline();
  CHECK(cli({"convert", "--corpus", P.ws.p("corpus.jsonl"), "--adapter",
             P.ws.p("nonexistent.json"), "--out", P.ws.p("x.jsonl")}) == 2);
}

TEST_CASE("train: artifacts carry manifests and reload cleanly") {
  auto& P = pipeline();
  CHECK(file_exists(P.ws.p("model/manifest.json")));
  CHECK(file_exists(P.ws.p("model/weights.bin")));
  CHECK(file_exists(P.ws.p("model/vectorizer.json")));
  CHECK(file_exists(P.ws.p("model/train_report.json")));
  CHECK(file_exists(P.ws.p("model/model.manifest.json")));
  const json manifest = read_json_file(P.ws.p("model/manifest.json"));
  CHECK(manifest.contains("vectorizer_hash"));
  CHECK(manifest["config"]["beta"].get<double>() == 1.0);
  CHECK(manifest["evaluation_mode"] == "deterministic");
}

TEST_CASE("train: epochs=0 is rejected as input error") {
  auto& P = pipeline();
  write_monitor_config(P.ws.p("bad.json"), 0, 1);
  CHECK(cli({"train", "--stepview", P.ws.p("stepview.jsonl"), "--splits",
             P.ws.p("splits.json"), "--config", P.ws.p("bad.json"), "--out-dir",
             P.ws.p("bad_model")}) == 2);
}

TEST_CASE("train: determinism and seed separation at the artifact level") {
  auto& P = pipeline();
  write_monitor_config(P.ws.p("m2.json"), 2, 21);
  REQUIRE(cli({"train", "--stepview", P.ws.p("stepview.jsonl"), "--splits",
               P.ws.p("splits.json"), "--config", P.ws.p("m2.json"), "--out-dir",
               P.ws.p("model_a")}) == 0);
  REQUIRE(cli({"train", "--stepview", P.ws.p("stepview.jsonl"), "--splits",
               P.ws.p("splits.json"), "--config", P.ws.p("m2.json"), "--out-dir",
               P.ws.p("model_b")}) == 0);
  CHECK(read_file(P.ws.p("model_a/weights.bin")) ==
        read_file(P.ws.p("model_b/weights.bin")));

  REQUIRE(cli({"train", "--stepview", P.ws.p("stepview.jsonl"), "--splits",
               P.ws.p("splits.json"), "--config", P.ws.p("m2.json"), "--seed",
               "22", "--out-dir", P.ws.p("model_c")}) == 0);
  CHECK(read_file(P.ws.p("model_a/weights.bin")) !=
        read_file(P.ws.p("model_c/weights.bin")));
}

TEST_CASE("eval: test split metrics with first-alert blocks") {
  auto& P = pipeline();
  REQUIRE(cli({"eval", "--model", P.ws.p("model"), "--stepview",
               P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
               "--split", "test", "--out", P.ws.p("metrics.json"),
               "--curves-prefix", P.ws.p("curves"), "--risk-out",
               P.ws.p("risk.jsonl")}) == 0);
  const json rep = read_json_file(P.ws.p("metrics.json"));
  for (const char* key : {"n", "positive_rate", "ap", "auroc", "ece", "brier",
                          "accuracy", "precision", "recall", "f1", "fpr"}) {
    CHECK(rep.contains(key));
  }
  REQUIRE(rep["first_alert"].size() == 3);  // default caps 0.05/0.10/0.20
  CHECK(rep["first_alert"][0]["far_cap"].get<double>() == 0.05);
  CHECK(file_exists(P.ws.p("curves_pr.csv")));
  CHECK(file_exists(P.ws.p("curves_roc.csv")));
  CHECK(rep["ap"].get<double>() > 0.5);  // planted signal is learnable

  // risk series JSONL: one line per test trajectory, aligned arrays
  std::ifstream risk(P.ws.p("risk.jsonl"));
  REQUIRE(risk.good());
  std::string line;
  int lines = 0;
  while (std::getline(risk, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    CHECK(row.contains("trajectory_id"));
    CHECK(row["scores"].size() == row["symbols"].size());
    for (const auto& s : row["scores"]) {
      CHECK(s.get<double>() >= 0.0);
      CHECK(s.get<double>() <= 1.0);
    }
    ++lines;
  }
  const json splits_doc = read_json_file(P.ws.p("splits.json"));
  CHECK(lines == static_cast<int>(splits_doc["test_ids"].size()));
}

TEST_CASE("eval: training-split evaluation requires --allow-insample") {
  auto& P = pipeline();
  CHECK(cli({"eval", "--model", P.ws.p("model"), "--stepview",
             P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
             "--split", "train", "--out", P.ws.p("leak.json")}) == 2);
  CHECK(cli({"eval", "--model", P.ws.p("model"), "--stepview",
             P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
             "--split", "train", "--allow-insample", "--out",
             P.ws.p("insample.json")}) == 0);
}

TEST_CASE("eval: corrupted artifact fails hash verification") {
  auto& P = pipeline();
  const std::string dir = P.ws.p("model_corrupt");
  fs::copy(P.ws.p("model"), dir, fs::copy_options::recursive);
  // flip one byte of the weight blob
  std::string blob = read_file(dir + "/weights.bin");
  blob[8] = static_cast<char>(blob[8] ^ 0x01);
  write_file(dir + "/weights.bin", blob);
  CHECK(cli({"eval", "--model", dir, "--stepview", P.ws.p("stepview.jsonl"),
             "--splits", P.ws.p("splits.json"), "--split", "test", "--out",
             P.ws.p("corrupt.json")}) == 2);
}

TEST_CASE("extract-dfa and audit: global machine") {
  auto& P = pipeline();
  REQUIRE(cli({"extract-dfa", "--model", P.ws.p("model"), "--stepview",
               P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
               "--min-count", "10", "--out", P.ws.p("dfa.json")}) == 0);
  const json dfa = read_json_file(P.ws.p("dfa.json"));
  CHECK(dfa.contains("transitions"));
  CHECK(dfa["min_count"].get<int>() == 10);

  REQUIRE(cli({"audit", "--dfa", P.ws.p("dfa.json"), "--model", P.ws.p("model"),
               "--stepview", P.ws.p("stepview.jsonl"), "--splits",
               P.ws.p("splits.json"), "--out", P.ws.p("audit.json")}) == 0);
  const json audit = read_json_file(P.ws.p("audit.json"));
  CHECK(audit["trusted_prefix_share"].get<double>() +
            audit["abstention_rate"].get<double>() ==
        doctest::Approx(1.0));
  CHECK(audit["state_count"].get<int>() >= 1);
}

TEST_CASE("extract-dfa: determinism of the artifact") {
  auto& P = pipeline();
  REQUIRE(cli({"extract-dfa", "--model", P.ws.p("model"), "--stepview",
               P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
               "--out", P.ws.p("dfa_a.json")}) == 0);
  REQUIRE(cli({"extract-dfa", "--model", P.ws.p("model"), "--stepview",
               P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
               "--out", P.ws.p("dfa_b.json")}) == 0);
  CHECK(read_file(P.ws.p("dfa_a.json")) == read_file(P.ws.p("dfa_b.json")));
}

TEST_CASE("extract-dfa: routed mode reports per-route state counts") {
  auto& P = pipeline();
  REQUIRE(cli({"extract-dfa", "--model", P.ws.p("model"), "--stepview",
               P.ws.p("stepview.jsonl"), "--splits", P.ws.p("splits.json"),
               "--route-key", "task_id", "--out", P.ws.p("routed.json")}) == 0);
  REQUIRE(cli({"audit", "--dfa", P.ws.p("routed.json"), "--model",
               P.ws.p("model"), "--stepview", P.ws.p("stepview.jsonl"),
               "--splits", P.ws.p("splits.json"), "--out",
               P.ws.p("routed_audit.json")}) == 0);
  const json audit = read_json_file(P.ws.p("routed_audit.json"));
  CHECK(audit["route_count"].get<int>() >= 1);
  int total = 0;
  for (const auto& [route, row] : audit["routes"].items()) {
    total += row["states"].get<int>();
  }
  CHECK(total == audit["total_states"].get<int>());
}

TEST_CASE("ceiling: inversion reproduces the published value") {
  auto& P = pipeline();
  REQUIRE(cli({"ceiling", "--invert", "0.900", "0.363", "--out",
               P.ws.p("ceiling.json")}) == 0);
  const json rep = read_json_file(P.ws.p("ceiling.json"));
  CHECK(std::abs(rep["required_pi"].get<double>() - 0.776) < 1e-3);
}

TEST_CASE("ceiling: grid export") {
  auto& P = pipeline();
  REQUIRE(cli({"ceiling", "--r", "0.363", "--grid", "10", "--out",
               P.ws.p("curve.csv")}) == 0);
  const std::string csv = read_file(P.ws.p("curve.csv"));
  CHECK(csv.rfind("pi,r,ceiling\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);  // header + 11 points
}

TEST_CASE("mpe: command runs the audit end to end") {
  auto& P = pipeline();
  REQUIRE(cli({"mpe", "--stepview", P.ws.p("stepview.jsonl"), "--splits",
               P.ws.p("splits.json"), "--protocol", "all_prefix",
               "--replicates", "30", "--out", P.ws.p("mpe.json")}) == 0);
  const json rep = read_json_file(P.ws.p("mpe.json"));
  CHECK(rep["pi_hat"].get<double>() >= 0.0);
  CHECK(rep["pi_hat"].get<double>() <= 1.0);
  CHECK(rep["replicates"].get<int>() == 30);
}

TEST_CASE("probe: t_only control emits a report row") {
  auto& P = pipeline();
  REQUIRE(cli({"probe", "--kind", "t_only", "--stepview", P.ws.p("stepview.jsonl"),
               "--splits", P.ws.p("splits.json"), "--out",
               P.ws.p("probe.json")}) == 0);
  const json rep = read_json_file(P.ws.p("probe.json"));
  CHECK(rep["kind"] == "t_only");
  CHECK(rep["ap"].get<double>() < 0.5);
}

TEST_CASE("unknown command and missing args exit with 2") {
  CHECK(cli({"frobnicate"}) == 2);
  CHECK(cli({"eval"}) == 2);
}
