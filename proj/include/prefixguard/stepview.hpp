#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefixguard/trace.hpp"

namespace prefixguard {

// Canonical seven-field view of one raw step. tool_name and status are
// always populated, with "unknown" as the sentinel.
struct StepViewRecord {
  std::vector<std::string> metadata_lines;
  std::vector<std::string> observation_lines;
  std::string action_text;
  std::string tool_name = "unknown";
  std::string tool_args_text;
  std::string result_text;
  std::string status = "unknown";

  nlohmann::json to_json() const;
  static StepViewRecord from_json(const nlohmann::json& j);
};

// Declarative field selector interpreted by a fixed engine; no generated
// code is executed. Supported kinds: key, path (dotted), regex (capture
// group 1 over a named key), const, none.
struct Selector {
  std::string kind = "none";
  std::string key;
  std::string path;
  std::string pattern;
  std::string value;

  nlohmann::json to_json() const;
  static Selector from_json(const nlohmann::json& j);
};

struct AdapterSpec {
  int version = 1;
  std::vector<Selector> metadata_sources;
  Selector observation_source;
  std::string observation_unit = "line";  // line|dialogue_turn|log_block|kv_block|none
  std::string reducer = "lexical_lines";  // lexical_lines|dialogue_turns|log_blocks|kv_blocks|none
  int max_observation_units = 4;
  Selector action_source;
  Selector tool_source;
  Selector args_source;
  Selector result_source;
  Selector status_source;
  std::string status_derive = "native";  // native|none
  std::map<std::string, std::string> tool_aliases;

  void validate() const;
  nlohmann::json to_json() const;
  static AdapterSpec from_json(const nlohmann::json& j);
};

// Adapter matching the synthetic corpus generator's raw step schema.
AdapterSpec default_synthetic_adapter();

struct AdapterOutcome {
  StepViewRecord record;
  bool fallback = false;  // tool unresolved; full step dumped into result_text
};

// Deterministic execution of a validated adapter spec on one raw step.
// Throws input_error with the step index when the raw step is not an object.
AdapterOutcome apply_adapter(const AdapterSpec& spec, const nlohmann::json& raw_step,
                             int step_index = 0);

// Monitor-facing canonical text: blocks in the order METADATA, OBSERVATION,
// ACTION, RESULT; every field truncated to 4096 characters.
std::string serialize_record(const StepViewRecord& record);

struct SamplePackEntry {
  std::string trajectory_id;
  int step_index = 0;  // 1-based
  std::string bucket;  // initial|mid|tool|anomalous
  nlohmann::json raw_step;
};

struct SamplePack {
  std::vector<SamplePackEntry> entries;  // exactly 12
  nlohmann::json to_json() const;
};

// Deterministic 12-step pack over the first 64 trajectories with bucket
// quotas 4/4/2/2 (initial/mid/tool/anomalous); within-bucket order by
// sha256("<trajectory_id>:<step_index>"); shortfalls backfill from mid.
SamplePack build_sample_pack(const Corpus& corpus);

struct CoverageReport {
  std::int64_t step_count = 0;
  std::map<std::string, double> fill_rates;  // per field, in [0,1]
  double fallback_rate = 0.0;

  nlohmann::json to_json() const;
};

CoverageReport validate_adapter(const AdapterSpec& spec, const Corpus& corpus);

// A converted trajectory: identity and outcome plus one record per step.
struct StepViewTrajectory {
  std::string trajectory_id;
  std::string task_id;
  int outcome = 1;
  std::vector<StepViewRecord> records;

  int length() const { return static_cast<int>(records.size()); }
};

using StepViewCorpus = std::vector<StepViewTrajectory>;

struct ConversionResult {
  StepViewCorpus corpus;
  CoverageReport coverage;
};

ConversionResult convert_corpus(const AdapterSpec& spec, const Corpus& corpus);

// JSONL mirroring the raw corpus with a "stepview" array per trajectory.
void write_stepview_jsonl(const std::string& path, const Corpus& raw,
                          const StepViewCorpus& converted);
StepViewCorpus read_stepview_jsonl(const std::string& path);

}  // namespace prefixguard
