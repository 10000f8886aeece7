#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>

#include "doctest.h"
#include "prefixguard/common.hpp"
#include "prefixguard/stepview.hpp"
#include "prefixguard/trace.hpp"

using namespace prefixguard;

TEST_CASE("apply_adapter: identity-style extraction") {
  const auto spec = default_synthetic_adapter();
  const nlohmann::json step = {{"tool", "click"},   {"status", "ok"},
                               {"action", "click"}, {"args", "{}"},
                               {"result", "done"},  {"observation", "page"},
                               {"meta", "bench=synthetic"}};
  const auto out = apply_adapter(spec, step);
  CHECK_FALSE(out.fallback);
  CHECK(out.record.tool_name == "click");
  CHECK(out.record.status == "ok");
  CHECK(out.record.result_text == "done");
  CHECK(out.record.metadata_lines == std::vector<std::string>{"bench=synthetic"});
}

TEST_CASE("apply_adapter: missing result leaves the field empty") {
  const auto spec = default_synthetic_adapter();
  const nlohmann::json step = {{"tool", "click"}, {"status", "ok"}};
  const auto out = apply_adapter(spec, step);
  CHECK(out.record.result_text.empty());
  CHECK_FALSE(out.fallback);
}

TEST_CASE("apply_adapter: unknown tool falls back to a monolithic dump") {
  const auto spec = default_synthetic_adapter();
  const nlohmann::json step = {{"status", "ok"}, {"result", "something"}};
  const auto out = apply_adapter(spec, step);
  CHECK(out.fallback);
  CHECK(out.record.tool_name == "unknown");
  // whole step visible in the result text
  CHECK(out.record.result_text.find("something") != std::string::npos);
  CHECK(out.record.result_text.find("status") != std::string::npos);
}

TEST_CASE("apply_adapter: tool aliases normalize names") {
  auto spec = default_synthetic_adapter();
  spec.tool_aliases = {{"click2", "click"}};
  const nlohmann::json step = {{"tool", "click2"}, {"status", "ok"}};
  CHECK(apply_adapter(spec, step).record.tool_name == "click");
}

TEST_CASE("apply_adapter: status derive none yields the sentinel only") {
  auto spec = default_synthetic_adapter();
  spec.status_derive = "none";
  const nlohmann::json step = {{"tool", "x"}, {"status", "ok"}};
  CHECK(apply_adapter(spec, step).record.status == "unknown");
}

TEST_CASE("apply_adapter: malformed step raises with the step index") {
  const auto spec = default_synthetic_adapter();
  try {
    apply_adapter(spec, nlohmann::json("not an object"), 17);
    FAIL("expected input_error");
  } catch (const input_error& e) {
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
}

TEST_CASE("apply_adapter: selectors are pure functions") {
  const auto spec = default_synthetic_adapter();
  const nlohmann::json step = {{"tool", "a"}, {"status", "ok"}, {"result", "r"}};
  const auto a = apply_adapter(spec, step);
  const auto b = apply_adapter(spec, step);
  CHECK(a.record.to_json() == b.record.to_json());
}

TEST_CASE("selectors: dotted path, regex capture, const") {
  Selector path;
  path.kind = "path";
  path.path = "env.response.code";
  Selector rx;
  rx.kind = "regex";
  rx.key = "log";
  rx.pattern = "code=(\\d+)";
  Selector cst;
  cst.kind = "const";
  cst.value = "fixed";

  AdapterSpec spec = default_synthetic_adapter();
  spec.status_source = path;
  spec.result_source = rx;
  spec.action_source = cst;
  const nlohmann::json step = {
      {"tool", "t"},
      {"env", {{"response", {{"code", "500"}}}}},
      {"log", "attempt code=404 failed"}};
  const auto out = apply_adapter(spec, step);
  CHECK(out.record.status == "500");
  CHECK(out.record.result_text == "404");
  CHECK(out.record.action_text == "fixed");
}

TEST_CASE("serialize_record: empty record matches the canonical form") {
  const StepViewRecord empty;
  CHECK(serialize_record(empty) ==
        "METADATA=[] OBSERVATION=[] ACTION=[action=; tool=unknown; args=] "
        "RESULT=[status=unknown; text=]");
}

TEST_CASE("serialize_record: field values appear verbatim, tool exactly once") {
  StepViewRecord r;
  r.tool_name = "click";
  r.action_text = "press";
  r.tool_args_text = "{\"x\":1}";
  r.result_text = "ok then";
  r.status = "ok";
  r.metadata_lines = {"m1", "m2"};
  r.observation_lines = {"o1"};
  const std::string text = serialize_record(r);
  for (const std::string& v : {"press", "{\"x\":1}", "ok then", "m1", "m2", "o1"}) {
    CHECK(text.find(v) != std::string::npos);
  }
  std::size_t count = 0, pos = 0;
  while ((pos = text.find("click", pos)) != std::string::npos) {
    ++count;
    pos += 5;
  }
  CHECK(count == 1);
  CHECK(serialize_record(r) == text);  // byte-identical on repeat
  // block order
  CHECK(text.find("METADATA=") < text.find("OBSERVATION="));
  CHECK(text.find("OBSERVATION=") < text.find("ACTION="));
  CHECK(text.find("ACTION=") < text.find("RESULT="));
}

TEST_CASE("serialize_record: fields are capped at 4096 characters") {
  StepViewRecord r;
  r.result_text = std::string(10000, 'x');
  const std::string text = serialize_record(r);
  CHECK(text.size() < 4200 + 100);
}

TEST_CASE("sample pack: deterministic and exactly twelve entries") {
  SynthConfig cfg;
  cfg.trajectory_count = 64;
  cfg.seed = 2;
  const auto corpus = generate_synthetic_corpus(cfg);
  const auto a = build_sample_pack(corpus);
  const auto b = build_sample_pack(corpus);
  REQUIRE(a.entries.size() == 12);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("sample pack: corpus-order independent for identical id sets") {
  SynthConfig cfg;
  cfg.trajectory_count = 40;
  cfg.seed = 3;
  auto corpus = generate_synthetic_corpus(cfg);
  const auto a = build_sample_pack(corpus);
  std::reverse(corpus.begin(), corpus.end());
  const auto b = build_sample_pack(corpus);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("sample pack: missing anomalous bucket backfills from mid") {
  // all-success corpus has no error steps at all
  SynthConfig cfg;
  cfg.trajectory_count = 30;
  cfg.failure_rate = 0.01;
  cfg.precursor_probability = 0.0;
  cfg.seed = 4;
  const auto corpus = generate_synthetic_corpus(cfg);
  const auto pack = build_sample_pack(corpus);
  REQUIRE(pack.entries.size() == 12);
  for (const auto& e : pack.entries) CHECK(e.bucket != "anomalous");
}

TEST_CASE("sample pack: too few steps is rejected with a diagnostic") {
  Corpus tiny;
  RawTrajectory t;
  t.trajectory_id = "only";
  t.outcome = 1;
  for (int i = 0; i < 5; ++i) t.steps.push_back({{"tool", "x"}});
  tiny.push_back(t);
  CHECK_THROWS_AS(build_sample_pack(tiny), input_error);
}

TEST_CASE("validate_adapter: fill rates and totals are consistent") {
  SynthConfig cfg;
  cfg.trajectory_count = 50;
  cfg.seed = 6;
  const auto corpus = generate_synthetic_corpus(cfg);
  const auto rep = validate_adapter(default_synthetic_adapter(), corpus);
  CHECK(rep.fallback_rate == 0.0);
  std::int64_t steps = 0;
  for (const auto& t : corpus) steps += t.length();
  CHECK(rep.step_count == steps);
  for (const auto& [field, rate] : rep.fill_rates) {
    CHECK(rate >= 0.0);
    CHECK(rate <= 1.0);
  }
  CHECK(rep.fill_rates.at("tool") == 1.0);
}

TEST_CASE("validate_adapter: status derive none reports sentinel-only fill") {
  SynthConfig cfg;
  cfg.trajectory_count = 20;
  cfg.seed = 12;
  const auto corpus = generate_synthetic_corpus(cfg);
  auto spec = default_synthetic_adapter();
  spec.status_derive = "none";
  const auto rep = validate_adapter(spec, corpus);
  CHECK(rep.fill_rates.at("status") == 0.0);
}

TEST_CASE("adapter spec json round trip and validation") {
  const auto spec = default_synthetic_adapter();
  const auto back = AdapterSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());

  nlohmann::json bad = spec.to_json();
  bad["tool_source"] = {{"kind", "exec"}, {"code", "rm -rf"}};
  CHECK_THROWS_AS(AdapterSpec::from_json(bad), input_error);
  nlohmann::json bad_rx = spec.to_json();
  bad_rx["result_source"] = {{"kind", "regex"}, {"key", "x"}, {"pattern", "("}};
  CHECK_THROWS_AS(AdapterSpec::from_json(bad_rx), input_error);
}

TEST_CASE("stepview corpus jsonl round trip") {
  SynthConfig cfg;
  cfg.trajectory_count = 12;
  cfg.seed = 8;
  const auto corpus = generate_synthetic_corpus(cfg);
  const auto converted = convert_corpus(default_synthetic_adapter(), corpus);
  const std::string path = "/tmp/pg_test_stepview.jsonl";
  write_stepview_jsonl(path, corpus, converted.corpus);
  const auto back = read_stepview_jsonl(path);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].trajectory_id == corpus[i].trajectory_id);
    CHECK(back[i].outcome == corpus[i].outcome);
    REQUIRE(back[i].length() == converted.corpus[i].length());
    for (int t = 0; t < back[i].length(); ++t) {
      CHECK(serialize_record(back[i].records[t]) ==
            serialize_record(converted.corpus[i].records[t]));
    }
  }
}
