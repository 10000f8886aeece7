#include "prefixguard/stepview.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "prefixguard/artifact.hpp"
#include "prefixguard/common.hpp"

namespace prefixguard {

namespace {

std::string json_to_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string extract(const Selector& sel, const nlohmann::json& step) {
  if (sel.kind == "none") return "";
  if (sel.kind == "const") return sel.value;
  if (sel.kind == "key") {
    if (step.contains(sel.key)) return json_to_text(step.at(sel.key));
    return "";
  }
  if (sel.kind == "path") {
    const nlohmann::json* cur = &step;
    std::stringstream ss(sel.path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!cur->is_object() || !cur->contains(part)) return "";
      cur = &cur->at(part);
    }
    return json_to_text(*cur);
  }
  if (sel.kind == "regex") {
    std::string source;
    if (sel.key.empty()) source = step.dump();
    else if (step.contains(sel.key)) source = json_to_text(step.at(sel.key));
    else return "";
    std::smatch m;
    if (std::regex_search(source, m, std::regex(sel.pattern)) && m.size() > 1) {
      return m[1].str();
    }
    return "";
  }
  throw input_error("unsupported selector kind: " + sel.kind);
}

std::vector<std::string> reduce_observation(const std::string& raw,
                                            const std::string& reducer,
                                            int max_units) {
  std::vector<std::string> units;
  if (raw.empty() || max_units <= 0) return units;
  if (reducer == "none") {
    units.push_back(trim(raw));
  } else if (reducer == "log_blocks") {
    // blocks split at blank lines
    std::string block;
    std::stringstream ss(raw);
    std::string line;
    auto flush = [&]() {
      const std::string t = trim(block);
      if (!t.empty()) units.push_back(t);
      block.clear();
    };
    while (std::getline(ss, line)) {
      if (trim(line).empty()) flush();
      else block += (block.empty() ? "" : " ") + trim(line);
    }
    flush();
  } else if (reducer == "kv_blocks") {
    std::stringstream ss(raw);
    std::string line;
    while (std::getline(ss, line)) {
      const std::string t = trim(line);
      if (t.find('=') != std::string::npos || t.find(':') != std::string::npos) {
        units.push_back(t);
      }
    }
  } else {  // lexical_lines and dialogue_turns both split on lines
    std::stringstream ss(raw);
    std::string line;
    while (std::getline(ss, line)) {
      const std::string t = trim(line);
      if (!t.empty()) units.push_back(t);
    }
  }
  if (static_cast<int>(units.size()) > max_units) units.resize(max_units);
  return units;
}

const std::vector<std::string>& error_lexicon() {
  static const std::vector<std::string> kLexicon = {
      "error",   "fail",    "exception", "traceback", "timeout",
      "denied",  "invalid", "refused",   "abort",     "fatal"};
  return kLexicon;
}

bool matches_error_lexicon(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (const auto& w : error_lexicon()) {
    if (lower.find(w) != std::string::npos) return true;
  }
  return false;
}

std::string truncate_field(const std::string& s) {
  constexpr std::size_t kFieldCap = 4096;
  return s.size() <= kFieldCap ? s : s.substr(0, kFieldCap);
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " | ";
    out += truncate_field(parts[i]);
  }
  return out;
}

}  // namespace

nlohmann::json StepViewRecord::to_json() const {
  return nlohmann::json{{"metadata_lines", metadata_lines},
                        {"observation_lines", observation_lines},
                        {"action_text", action_text},
                        {"tool_name", tool_name},
                        {"tool_args_text", tool_args_text},
                        {"result_text", result_text},
                        {"status", status}};
}

StepViewRecord StepViewRecord::from_json(const nlohmann::json& j) {
  StepViewRecord r;
  r.metadata_lines = j.value("metadata_lines", std::vector<std::string>{});
  r.observation_lines = j.value("observation_lines", std::vector<std::string>{});
  r.action_text = j.value("action_text", "");
  r.tool_name = j.value("tool_name", "unknown");
  r.tool_args_text = j.value("tool_args_text", "");
  r.result_text = j.value("result_text", "");
  r.status = j.value("status", "unknown");
  return r;
}

nlohmann::json Selector::to_json() const {
  nlohmann::json j{{"kind", kind}};
  if (!key.empty()) j["key"] = key;
  if (!path.empty()) j["path"] = path;
  if (!pattern.empty()) j["pattern"] = pattern;
  if (!value.empty()) j["value"] = value;
  return j;
}

Selector Selector::from_json(const nlohmann::json& j) {
  Selector s;
  s.kind = j.value("kind", "none");
  s.key = j.value("key", "");
  s.path = j.value("path", "");
  s.pattern = j.value("pattern", "");
  s.value = j.value("value", "");
  return s;
}

void AdapterSpec::validate() const {
  auto check = [](const Selector& s, const std::string& where) {
    static const std::vector<std::string> kKinds = {"key", "path", "regex",
                                                    "const", "none"};
    if (std::find(kKinds.begin(), kKinds.end(), s.kind) == kKinds.end()) {
      throw input_error("adapter spec: unsupported selector kind '" + s.kind +
                        "' for " + where);
    }
    if (s.kind == "key" && s.key.empty()) {
      throw input_error("adapter spec: key selector without key for " + where);
    }
    if (s.kind == "path" && s.path.empty()) {
      throw input_error("adapter spec: path selector without path for " + where);
    }
    if (s.kind == "regex") {
      try {
        std::regex re(s.pattern);
      } catch (const std::regex_error&) {
        throw input_error("adapter spec: invalid regex for " + where);
      }
    }
  };
  for (const auto& s : metadata_sources) check(s, "metadata");
  check(observation_source, "observation");
  check(action_source, "action");
  check(tool_source, "tool");
  check(args_source, "args");
  check(result_source, "result");
  check(status_source, "status");
  static const std::vector<std::string> kUnits = {"line", "dialogue_turn",
                                                  "log_block", "kv_block", "none"};
  if (std::find(kUnits.begin(), kUnits.end(), observation_unit) == kUnits.end()) {
    throw input_error("adapter spec: unsupported observation unit");
  }
  static const std::vector<std::string> kReducers = {
      "lexical_lines", "dialogue_turns", "log_blocks", "kv_blocks", "none"};
  if (std::find(kReducers.begin(), kReducers.end(), reducer) == kReducers.end()) {
    throw input_error("adapter spec: unsupported reducer");
  }
  if (status_derive != "native" && status_derive != "none") {
    throw input_error("adapter spec: status derive policy must be native|none");
  }
  if (max_observation_units < 0) {
    throw input_error("adapter spec: max_observation_units must be >= 0");
  }
}

nlohmann::json AdapterSpec::to_json() const {
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& s : metadata_sources) meta.push_back(s.to_json());
  return nlohmann::json{{"version", version},
                        {"metadata_sources", meta},
                        {"observation_source", observation_source.to_json()},
                        {"observation_unit", observation_unit},
                        {"reducer", reducer},
                        {"max_observation_units", max_observation_units},
                        {"action_source", action_source.to_json()},
                        {"tool_source", tool_source.to_json()},
                        {"args_source", args_source.to_json()},
                        {"result_source", result_source.to_json()},
                        {"status_source", status_source.to_json()},
                        {"status_derive", status_derive},
                        {"tool_aliases", tool_aliases}};
}

AdapterSpec AdapterSpec::from_json(const nlohmann::json& j) {
  AdapterSpec a;
  a.version = j.value("version", 1);
  if (j.contains("metadata_sources")) {
    for (const auto& s : j["metadata_sources"]) {
      a.metadata_sources.push_back(Selector::from_json(s));
    }
  }
  auto sel = [&](const char* name) {
    return j.contains(name) ? Selector::from_json(j[name]) : Selector{};
  };
  a.observation_source = sel("observation_source");
  a.observation_unit = j.value("observation_unit", "line");
  a.reducer = j.value("reducer", "lexical_lines");
  a.max_observation_units = j.value("max_observation_units", 4);
  a.action_source = sel("action_source");
  a.tool_source = sel("tool_source");
  a.args_source = sel("args_source");
  a.result_source = sel("result_source");
  a.status_source = sel("status_source");
  a.status_derive = j.value("status_derive", "native");
  if (j.contains("tool_aliases")) {
    a.tool_aliases = j["tool_aliases"].get<std::map<std::string, std::string>>();
  }
  a.validate();
  return a;
}

AdapterSpec default_synthetic_adapter() {
  auto key = [](const char* k) {
    Selector s;
    s.kind = "key";
    s.key = k;
    return s;
  };
  AdapterSpec a;
  a.metadata_sources = {key("meta")};
  a.observation_source = key("observation");
  a.action_source = key("action");
  a.tool_source = key("tool");
  a.args_source = key("args");
  a.result_source = key("result");
  a.status_source = key("status");
  return a;
}

AdapterOutcome apply_adapter(const AdapterSpec& spec, const nlohmann::json& raw_step,
                             int step_index) {
  if (!raw_step.is_object()) {
    throw input_error("apply_adapter: raw step " + std::to_string(step_index) +
                      " is not an object");
  }
  AdapterOutcome out;
  StepViewRecord& r = out.record;
  for (const auto& s : spec.metadata_sources) {
    const std::string v = trim(extract(s, raw_step));
    if (!v.empty()) r.metadata_lines.push_back(v);
  }
  r.observation_lines = reduce_observation(extract(spec.observation_source, raw_step),
                                           spec.reducer, spec.max_observation_units);
  r.action_text = trim(extract(spec.action_source, raw_step));
  r.tool_args_text = trim(extract(spec.args_source, raw_step));
  r.result_text = trim(extract(spec.result_source, raw_step));

  std::string tool = trim(extract(spec.tool_source, raw_step));
  if (tool.empty()) {
    // No recognizable tool: keep the whole step visible to the monitor.
    r.tool_name = "unknown";
    r.result_text = raw_step.dump();
    out.fallback = true;
  } else {
    const auto alias = spec.tool_aliases.find(tool);
    r.tool_name = alias != spec.tool_aliases.end() ? alias->second : tool;
  }

  if (spec.status_derive == "none") {
    r.status = "unknown";
  } else {
    const std::string st = trim(extract(spec.status_source, raw_step));
    r.status = st.empty() ? "unknown" : st;
  }
  return out;
}

std::string serialize_record(const StepViewRecord& record) {
  std::string out = "METADATA=[" + join(record.metadata_lines) + "]";
  out += " OBSERVATION=[" + join(record.observation_lines) + "]";
  out += " ACTION=[action=" + truncate_field(record.action_text);
  out += "; tool=" + truncate_field(record.tool_name);
  out += "; args=" + truncate_field(record.tool_args_text) + "]";
  out += " RESULT=[status=" + truncate_field(record.status);
  out += "; text=" + truncate_field(record.result_text) + "]";
  return out;
}

namespace {

std::string bucket_of(const nlohmann::json& step, int step_index) {
  std::string status;
  if (step.is_object() && step.contains("status")) {
    status = json_to_text(step.at("status"));
  }
  const bool status_anomalous =
      !status.empty() && status != "ok" && status != "success";
  if (status_anomalous || matches_error_lexicon(step.dump())) return "anomalous";
  if (step_index == 1) return "initial";
  static const std::vector<std::string> kToolKeys = {"tool", "tool_name", "function",
                                                     "command"};
  if (step.is_object()) {
    for (const auto& k : kToolKeys) {
      if (step.contains(k) && !json_to_text(step.at(k)).empty()) return "tool";
    }
  }
  return "mid";
}

}  // namespace

nlohmann::json SamplePack::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"trajectory_id", e.trajectory_id},
                   {"step_index", e.step_index},
                   {"bucket", e.bucket},
                   {"raw_step", e.raw_step}});
  }
  return nlohmann::json{{"entries", arr}};
}

SamplePack build_sample_pack(const Corpus& corpus) {
  if (corpus.empty()) throw input_error("build_sample_pack: empty corpus");
  struct Candidate {
    std::string hash;
    SamplePackEntry entry;
  };
  std::map<std::string, std::vector<Candidate>> buckets;
  const std::size_t scan = std::min<std::size_t>(corpus.size(), 64);
  for (std::size_t i = 0; i < scan; ++i) {
    const auto& traj = corpus[i];
    for (int t = 1; t <= traj.length(); ++t) {
      const auto& step = traj.steps[t - 1];
      Candidate c;
      c.hash = sha256_hex(traj.trajectory_id + ":" + std::to_string(t));
      c.entry = {traj.trajectory_id, t, bucket_of(step, t), step};
      buckets[c.entry.bucket].push_back(std::move(c));
    }
  }
  for (auto& [name, cands] : buckets) {
    std::sort(cands.begin(), cands.end(),
              [](const Candidate& a, const Candidate& b) { return a.hash < b.hash; });
  }

  const std::vector<std::pair<std::string, std::size_t>> quotas = {
      {"initial", 4}, {"mid", 4}, {"tool", 2}, {"anomalous", 2}};
  SamplePack pack;
  std::map<std::string, std::size_t> used;
  for (const auto& [name, quota] : quotas) {
    const auto& cands = buckets[name];
    const std::size_t take = std::min(quota, cands.size());
    for (std::size_t k = 0; k < take; ++k) pack.entries.push_back(cands[k].entry);
    used[name] = take;
  }
  // Backfill shortfalls, preferring the mid bucket, then the others in
  // quota order, always continuing in hash order.
  const std::vector<std::string> backfill_order = {"mid", "initial", "tool",
                                                   "anomalous"};
  for (const auto& name : backfill_order) {
    auto& cands = buckets[name];
    while (pack.entries.size() < 12 && used[name] < cands.size()) {
      pack.entries.push_back(cands[used[name]].entry);
      ++used[name];
    }
  }
  if (pack.entries.size() < 12) {
    throw input_error("build_sample_pack: only " +
                      std::to_string(pack.entries.size()) +
                      " eligible steps in the first " + std::to_string(scan) +
                      " trajectories; need 12");
  }
  return pack;
}

CoverageReport validate_adapter(const AdapterSpec& spec, const Corpus& corpus) {
  spec.validate();
  CoverageReport rep;
  std::map<std::string, std::int64_t> filled;
  std::int64_t fallbacks = 0;
  for (const auto& traj : corpus) {
    for (int t = 1; t <= traj.length(); ++t) {
      const AdapterOutcome out = apply_adapter(spec, traj.steps[t - 1], t);
      const StepViewRecord& r = out.record;
      ++rep.step_count;
      if (out.fallback) ++fallbacks;
      filled["metadata"] += !r.metadata_lines.empty();
      filled["observation"] += !r.observation_lines.empty();
      filled["action"] += !r.action_text.empty();
      filled["tool"] += r.tool_name != "unknown";
      filled["args"] += !r.tool_args_text.empty();
      filled["result"] += !r.result_text.empty();
      filled["status"] += r.status != "unknown";
    }
  }
  for (const auto& [field, n] : filled) {
    rep.fill_rates[field] =
        rep.step_count ? static_cast<double>(n) / rep.step_count : 0.0;
  }
  rep.fallback_rate =
      rep.step_count ? static_cast<double>(fallbacks) / rep.step_count : 0.0;
  return rep;
}

nlohmann::json CoverageReport::to_json() const {
  return nlohmann::json{{"step_count", step_count},
                        {"fill_rates", fill_rates},
                        {"fallback_rate", fallback_rate}};
}

ConversionResult convert_corpus(const AdapterSpec& spec, const Corpus& corpus) {
  spec.validate();
  ConversionResult res;
  res.coverage = validate_adapter(spec, corpus);
  res.corpus.reserve(corpus.size());
  for (const auto& traj : corpus) {
    StepViewTrajectory sv;
    sv.trajectory_id = traj.trajectory_id;
    sv.task_id = traj.task_id;
    sv.outcome = traj.outcome;
    for (int t = 1; t <= traj.length(); ++t) {
      sv.records.push_back(apply_adapter(spec, traj.steps[t - 1], t).record);
    }
    res.corpus.push_back(std::move(sv));
  }
  return res;
}

void write_stepview_jsonl(const std::string& path, const Corpus& raw,
                          const StepViewCorpus& converted) {
  if (raw.size() != converted.size()) {
    throw input_error("write_stepview_jsonl: corpus size mismatch");
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    nlohmann::json line = trajectory_to_json(raw[i]);
    nlohmann::json sv = nlohmann::json::array();
    for (const auto& r : converted[i].records) sv.push_back(r.to_json());
    line["stepview"] = sv;
    out << line.dump() << "\n";
  }
  write_file(path, out.str());
}

StepViewCorpus read_stepview_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open stepview corpus: " + path);
  StepViewCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw input_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("stepview")) {
      throw input_error(path + ":" + std::to_string(lineno) +
                        ": missing stepview array (run convert first)");
    }
    StepViewTrajectory sv;
    sv.trajectory_id = j.at("trajectory_id").get<std::string>();
    sv.task_id = j.value("task_id", "");
    sv.outcome = j.at("outcome").get<int>();
    for (const auto& r : j["stepview"]) {
      sv.records.push_back(StepViewRecord::from_json(r));
    }
    if (sv.records.empty()) {
      throw input_error(path + ":" + std::to_string(lineno) + ": empty stepview");
    }
    corpus.push_back(std::move(sv));
  }
  if (corpus.empty()) throw input_error("stepview corpus is empty: " + path);
  return corpus;
}

}  // namespace prefixguard
