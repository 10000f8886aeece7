#include "prefixguard/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "prefixguard/artifact.hpp"
#include "prefixguard/automaton.hpp"
#include "prefixguard/common.hpp"
#include "prefixguard/encoder.hpp"
#include "prefixguard/metrics.hpp"
#include "prefixguard/monitor.hpp"
#include "prefixguard/observability.hpp"
#include "prefixguard/probes.hpp"
#include "prefixguard/stepview.hpp"
#include "prefixguard/trace.hpp"

namespace prefixguard {

namespace {

RunManifest start_manifest(const std::string& command, std::uint64_t seed,
                           json config = json::object()) {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  m.config = std::move(config);
  m.toolkit_version = kToolkitVersion;
  m.started_at = iso8601_now();
  return m;
}

void finish_manifest(RunManifest& m, const std::string& primary_output) {
  m.finished_at = iso8601_now();
  write_manifest(m, primary_output);
}

SplitSpec load_splits(const std::string& path) {
  verify_artifact(path);
  SplitSpec s = SplitSpec::from_json(read_json_file(path));
  std::set<std::string> seen;
  auto check = [&](const std::vector<std::string>& ids, const char* name) {
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        throw input_error(std::string("splits: id '") + id + "' appears in " +
                          name + " and another split");
      }
    }
  };
  check(s.train_ids, "train");
  check(s.calibration_ids, "calibration");
  check(s.validation_ids, "validation");
  check(s.test_ids, "test");
  return s;
}

StepViewCorpus select_split(const StepViewCorpus& corpus,
                            const std::vector<std::string>& ids) {
  std::map<std::string, const StepViewTrajectory*> by_id;
  for (const auto& t : corpus) by_id[t.trajectory_id] = &t;
  StepViewCorpus out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw input_error("splits reference unknown trajectory " + id);
    }
    out.push_back(*it->second);
  }
  return out;
}

std::vector<std::string> train_step_texts(const StepViewCorpus& train) {
  std::vector<std::string> texts;
  for (const auto& traj : train) {
    for (const auto& r : traj.records) texts.push_back(serialize_record(r));
  }
  return texts;
}

SymbolTrajectory symbolize(const MonitorModel& model, const VectorizerModel& vec,
                           const StepViewTrajectory& traj, int horizon) {
  StepViewCorpus one = {traj};
  const auto encoded = encode_corpus(one, vec, horizon);
  SymbolTrajectory st;
  st.trajectory_id = traj.trajectory_id;
  st.outcome = traj.outcome;
  st.symbols = hard_symbolize(model, encoded.front());
  st.labels = encoded.front().labels;
  return st;
}

std::vector<SymbolTrajectory> symbolize_split(const MonitorModel& model,
                                              const VectorizerModel& vec,
                                              const StepViewCorpus& split,
                                              int horizon) {
  std::vector<SymbolTrajectory> out;
  out.reserve(split.size());
  for (const auto& traj : split) out.push_back(symbolize(model, vec, traj, horizon));
  return out;
}

ThresholdPolicy parse_policy(const std::string& text) {
  if (text == "f1") return ThresholdPolicy::f1();
  if (text.rfind("far:", 0) == 0) {
    return ThresholdPolicy::far(std::stod(text.substr(4)));
  }
  throw input_error("policy must be 'f1' or 'far:<cap>'");
}

ScoredPrefixSet dfa_scored_set(const Dfa& dfa,
                               const std::vector<SymbolTrajectory>& split) {
  ScoredPrefixSet set;
  for (const auto& traj : split) {
    const DfaRiskSeries rs = dfa_score_prefix(dfa, traj);
    for (std::size_t t = 0; t < rs.scores.size(); ++t) {
      ScoredPrefix p;
      p.trajectory_id = traj.trajectory_id;
      p.step = static_cast<int>(t) + 1;
      p.length = static_cast<int>(rs.scores.size());
      p.outcome = traj.outcome;
      p.label = traj.labels[t];
      p.score = rs.scores[t];
      p.abstain = rs.abstain[t];
      set.push_back(std::move(p));
    }
  }
  return set;
}

std::string route_value(const StepViewTrajectory& traj, const std::string& key) {
  if (key == "task_id") return traj.task_id;
  // metadata route: first step's metadata line starting with "<key>="
  if (!traj.records.empty()) {
    for (const auto& line : traj.records.front().metadata_lines) {
      if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    }
  }
  return "";
}

void write_curves(const ScoredPrefixSet& set, const std::string& prefix) {
  {
    std::ostringstream csv;
    csv << "recall,precision,threshold\n";
    for (const auto& pt : pr_curve(set)) {
      csv << pt[0] << "," << pt[1] << "," << pt[2] << "\n";
    }
    write_file(prefix + "_pr.csv", csv.str());
  }
  {
    std::ostringstream csv;
    csv << "fpr,tpr,threshold\n";
    for (const auto& pt : roc_curve(set)) {
      csv << pt[0] << "," << pt[1] << "," << pt[2] << "\n";
    }
    write_file(prefix + "_roc.csv", csv.str());
  }
}

json first_alert_json(const FirstAlertReport& r, double cap) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return json{{"far_cap", cap},
              {"gamma", std::isinf(r.gamma) ? json("inf") : json(r.gamma)},
              {"measured_far", opt(r.far)},
              {"fail_alert_recall", r.fail_alert_recall},
              {"early_fail_recall", r.early_fail_recall},
              {"alert_precision", opt(r.alert_precision)},
              {"mean_lead_time", r.mean_lead_time},
              {"alerted_trajectories", r.alerted_trajectories}};
}

int cmd_synth(const std::string& config_path, const std::string& out,
              const std::string& adapter_out, const std::string& splits_out,
              double train_ratio, double val_ratio, double test_ratio,
              double cal_fraction, std::uint64_t split_seed) {
  SynthConfig cfg;
  if (!config_path.empty()) {
    verify_artifact(config_path);
    cfg = SynthConfig::from_json(read_json_file(config_path));
  }
  RunManifest m = start_manifest("synth", cfg.seed, cfg.to_json());
  if (!config_path.empty()) manifest_add_input(m, config_path);
  const Corpus corpus = generate_synthetic_corpus(cfg);
  write_corpus_jsonl(out, corpus);
  manifest_add_output(m, out);
  if (!adapter_out.empty()) {
    write_json_file(adapter_out, default_synthetic_adapter().to_json());
    manifest_add_output(m, adapter_out);
  }
  if (!splits_out.empty()) {
    const SplitSpec splits = make_splits(corpus, train_ratio, val_ratio,
                                         test_ratio, cal_fraction, split_seed);
    write_json_file(splits_out, splits.to_json());
    manifest_add_output(m, splits_out);
  }
  finish_manifest(m, out);
  std::cout << "synth: wrote " << corpus.size() << " trajectories to " << out
            << "\n";
  return 0;
}

int cmd_split(const std::string& corpus_path, const std::string& out,
              double train_ratio, double val_ratio, double test_ratio,
              double cal_fraction, std::uint64_t seed) {
  verify_artifact(corpus_path);
  const Corpus corpus = read_corpus_jsonl(corpus_path);
  RunManifest m = start_manifest("split", seed);
  manifest_add_input(m, corpus_path);
  const SplitSpec splits =
      make_splits(corpus, train_ratio, val_ratio, test_ratio, cal_fraction, seed);
  write_json_file(out, splits.to_json());
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "split: " << splits.train_ids.size() << " train / "
            << splits.calibration_ids.size() << " cal / "
            << splits.validation_ids.size() << " val / " << splits.test_ids.size()
            << " test\n";
  return 0;
}

int cmd_convert(const std::string& corpus_path, const std::string& adapter_path,
                const std::string& out, const std::string& report_path) {
  verify_artifact(corpus_path);
  verify_artifact(adapter_path);
  const Corpus corpus = read_corpus_jsonl(corpus_path);
  const AdapterSpec spec = AdapterSpec::from_json(read_json_file(adapter_path));
  RunManifest m = start_manifest("convert", 0, spec.to_json());
  manifest_add_input(m, corpus_path);
  manifest_add_input(m, adapter_path);
  const ConversionResult res = convert_corpus(spec, corpus);
  write_stepview_jsonl(out, corpus, res.corpus);
  manifest_add_output(m, out);
  if (!report_path.empty()) {
    write_json_file(report_path, res.coverage.to_json());
    manifest_add_output(m, report_path);
  }
  finish_manifest(m, out);
  std::cout << "convert: " << res.coverage.step_count << " steps, fallback rate "
            << res.coverage.fallback_rate << "\n";
  return 0;
}

int cmd_fit_encoder(const std::string& stepview_path, const std::string& splits_path,
                    const std::string& out, bool probe) {
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  const StepViewCorpus train = select_split(corpus, splits.train_ids);
  RunManifest m = start_manifest("fit-encoder", 0);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  const EncoderConfig cfg = probe ? probe_encoder_config() : EncoderConfig{};
  const VectorizerModel vec = VectorizerModel::fit(train_step_texts(train), cfg);
  write_json_file(out, vec.to_json());
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "fit-encoder: " << vec.dimension() << " features from "
            << vec.fitted_documents() << " training steps\n";
  return 0;
}

int cmd_train(const std::string& stepview_path, const std::string& splits_path,
              const std::string& config_path, const std::string& out_dir,
              const std::string& vectorizer_path, std::int64_t seed_override) {
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  MonitorConfig config;
  if (!config_path.empty()) {
    verify_artifact(config_path);
    config = MonitorConfig::from_json(read_json_file(config_path));
  }
  if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
  config.validate();

  RunManifest m = start_manifest("train", config.seed, config.to_json());
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  if (!config_path.empty()) manifest_add_input(m, config_path);

  const StepViewCorpus train = select_split(corpus, splits.train_ids);
  const StepViewCorpus cal = select_split(corpus, splits.calibration_ids);
  const StepViewCorpus val = select_split(corpus, splits.validation_ids);

  VectorizerModel vec;
  if (vectorizer_path.empty()) {
    vec = VectorizerModel::fit(train_step_texts(train), EncoderConfig{});
  } else {
    verify_artifact(vectorizer_path);
    vec = VectorizerModel::from_json(read_json_file(vectorizer_path));
    manifest_add_input(m, vectorizer_path);
  }

  const auto enc_train = encode_corpus(train, vec, config.horizon);
  const auto enc_cal = encode_corpus(cal, vec, config.horizon);
  const auto enc_val = encode_corpus(val, vec, config.horizon);

  const TrainResult result = train_monitor(enc_train, enc_cal, enc_val, config,
                                           vec.content_hash(), vec.dimension());
  std::filesystem::create_directories(out_dir);
  result.model.save(out_dir);
  write_json_file(out_dir + "/vectorizer.json", vec.to_json());
  write_json_file(out_dir + "/train_report.json", result.report.to_json());
  manifest_add_output(m, out_dir + "/manifest.json");
  manifest_add_output(m, out_dir + "/weights.bin");
  manifest_add_output(m, out_dir + "/vectorizer.json");
  manifest_add_output(m, out_dir + "/train_report.json");
  finish_manifest(m, out_dir + "/model");
  std::cout << "train: best epoch " << result.report.best_epoch
            << ", validation AUPRC " << result.report.best_val_auprc << "\n";
  return 0;
}

struct LoadedModel {
  MonitorModel model;
  VectorizerModel vectorizer;
};

LoadedModel load_model_dir(const std::string& dir) {
  verify_artifact(dir + "/weights.bin");
  LoadedModel lm{MonitorModel::load(dir),
                 VectorizerModel::from_json(read_json_file(dir + "/vectorizer.json"))};
  require_vectorizer(lm.model, lm.vectorizer);
  return lm;
}

int cmd_eval(const std::string& model_dir, const std::string& stepview_path,
             const std::string& splits_path, const std::string& split_name,
             const std::string& policy_text, const std::vector<double>& far_caps,
             const std::string& out, const std::string& curves_prefix,
             const std::string& risk_out, bool allow_insample) {
  const LoadedModel lm = load_model_dir(model_dir);
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);

  const std::map<std::string, const std::vector<std::string>*> split_ids = {
      {"train", &splits.train_ids},
      {"calibration", &splits.calibration_ids},
      {"validation", &splits.validation_ids},
      {"test", &splits.test_ids}};
  const auto split_it = split_ids.find(split_name);
  if (split_it == split_ids.end()) {
    throw input_error("eval: unknown split '" + split_name + "'");
  }
  if ((split_name == "train" || split_name == "calibration") && !allow_insample) {
    throw input_error("eval: refusing to evaluate on data the model was fitted "
                      "or calibrated on (pass --allow-insample to override)");
  }

  RunManifest m = start_manifest("eval", lm.model.training_seed);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  manifest_add_input(m, model_dir + "/weights.bin");

  const int horizon = lm.model.config.horizon;
  const auto enc_cal = encode_corpus(
      select_split(corpus, splits.calibration_ids), lm.vectorizer, horizon);
  const auto enc_eval =
      encode_corpus(select_split(corpus, *split_it->second), lm.vectorizer, horizon);

  const ScoredPrefixSet cal_set = score_corpus(lm.model, enc_cal);
  const ScoredPrefixSet eval_set = score_corpus(lm.model, enc_eval);

  const ThresholdResult op_threshold =
      select_threshold(cal_set, parse_policy(policy_text));
  json report = metrics_report(eval_set, op_threshold.gamma);
  report["split"] = split_name;
  report["policy"] = policy_text;
  report["threshold_unattainable"] = op_threshold.unattainable;

  json alerts = json::array();
  const auto eval_series = group_by_trajectory(eval_set);
  for (const double cap : far_caps) {
    const ThresholdResult tr = select_threshold(cal_set, ThresholdPolicy::far(cap));
    const FirstAlertReport fr = first_alert_diagnostics(eval_series, tr.gamma, horizon);
    json row = first_alert_json(fr, cap);
    row["unattainable"] = tr.unattainable;
    alerts.push_back(row);
  }
  report["first_alert"] = alerts;

  write_json_file(out, report);
  manifest_add_output(m, out);
  if (!curves_prefix.empty()) {
    write_curves(eval_set, curves_prefix);
    manifest_add_output(m, curves_prefix + "_pr.csv");
    manifest_add_output(m, curves_prefix + "_roc.csv");
  }
  if (!risk_out.empty()) {
    std::ostringstream lines;
    for (const auto& traj : enc_eval) {
      const RiskSeries rs = score_prefix(lm.model, traj);
      lines << json{{"trajectory_id", rs.trajectory_id},
                    {"scores", rs.scores},
                    {"symbols", rs.symbols}}
                   .dump()
            << "\n";
    }
    write_file(risk_out, lines.str());
    manifest_add_output(m, risk_out);
  }
  finish_manifest(m, out);
  std::cout << "eval[" << split_name << "]: AP " << report["ap"] << ", AUROC "
            << report["auroc"] << "\n";
  return 0;
}

int cmd_extract_dfa(const std::string& model_dir, const std::string& stepview_path,
                    const std::string& splits_path, int min_count,
                    const std::string& samples_mode, const std::string& route_key,
                    const std::string& out) {
  const LoadedModel lm = load_model_dir(model_dir);
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  const int horizon = lm.model.config.horizon;
  const InductionSamples mode = samples_mode == "prefix"
                                    ? InductionSamples::kPrefixes
                                    : InductionSamples::kFullTrajectories;

  RunManifest m = start_manifest("extract-dfa", lm.model.training_seed);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  manifest_add_input(m, model_dir + "/weights.bin");
  const std::string model_hash = sha256_hex(read_file(model_dir + "/weights.bin"));

  const StepViewCorpus train = select_split(corpus, splits.train_ids);
  const StepViewCorpus cal = select_split(corpus, splits.calibration_ids);

  json artifact;
  if (route_key.empty()) {
    const auto train_sym = symbolize_split(lm.model, lm.vectorizer, train, horizon);
    const auto cal_sym = symbolize_split(lm.model, lm.vectorizer, cal, horizon);
    Dfa dfa = induce_dfa(train_sym, lm.model.config.alphabet_size, mode);
    dfa = calibrate_state_risks(dfa, cal_sym, min_count);
    dfa.source_model_hash = model_hash;
    artifact = dfa.to_json();
  } else {
    std::vector<std::pair<std::string, SymbolTrajectory>> train_routed, cal_routed;
    for (const auto& traj : train) {
      train_routed.emplace_back(route_value(traj, route_key),
                                symbolize(lm.model, lm.vectorizer, traj, horizon));
    }
    for (const auto& traj : cal) {
      cal_routed.emplace_back(route_value(traj, route_key),
                              symbolize(lm.model, lm.vectorizer, traj, horizon));
    }
    RoutedDfa routed = induce_routed_dfa(train_routed, cal_routed,
                                         lm.model.config.alphabet_size, min_count,
                                         mode);
    routed.route_key = route_key;
    artifact = routed.to_json();
    artifact["source_model_hash"] = model_hash;
  }
  write_json_file(out, artifact);
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "extract-dfa: wrote " << out << "\n";
  return 0;
}

int cmd_audit(const std::string& dfa_path, const std::string& model_dir,
              const std::string& stepview_path, const std::string& splits_path,
              const std::string& out) {
  verify_artifact(dfa_path);
  const json artifact = read_json_file(dfa_path);
  const LoadedModel lm = load_model_dir(model_dir);
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  const int horizon = lm.model.config.horizon;
  const std::string model_hash = sha256_hex(read_file(model_dir + "/weights.bin"));

  RunManifest m = start_manifest("audit", lm.model.training_seed);
  manifest_add_input(m, dfa_path);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);

  const auto cal_sym = symbolize_split(
      lm.model, lm.vectorizer, select_split(corpus, splits.calibration_ids), horizon);
  const auto test_sym = symbolize_split(
      lm.model, lm.vectorizer, select_split(corpus, splits.test_ids), horizon);

  json report;
  if (artifact.contains("routes")) {
    const RoutedDfa routed = RoutedDfa::from_json(artifact);
    json per_route = json::object();
    int total_states = 0;
    for (const auto& [route, dfa] : routed.routes) {
      per_route[route] = {{"states", dfa.state_count()}};
      total_states += dfa.state_count();
    }
    report = json{{"route_key", routed.route_key},
                  {"routes", per_route},
                  {"route_count", routed.routes.size()},
                  {"total_states", total_states},
                  {"global_prior", routed.global_prior}};
  } else {
    Dfa dfa = Dfa::from_json(artifact);
    if (!dfa.source_model_hash.empty() && dfa.source_model_hash != model_hash) {
      throw input_error("audit: DFA was extracted from a different model");
    }
    const ScoredPrefixSet cal_set = dfa_scored_set(dfa, cal_sym);
    const ThresholdResult thr = select_threshold(cal_set, ThresholdPolicy::f1());
    const DfaAuditReport rep = audit_dfa(dfa, test_sym, thr.gamma);
    report = rep.to_json();
    report["warning_threshold"] = thr.gamma;
    const ScoredPrefixSet test_set = dfa_scored_set(dfa, test_sym);
    report["test_ap"] = average_precision(test_set);
    report["test_auroc"] = auroc(test_set);
  }
  write_json_file(out, report);
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "audit: wrote " << out << "\n";
  return 0;
}

int cmd_ceiling(bool invert, double achieved, double rate, int grid,
                const std::vector<double>& r_values, const std::string& out) {
  if (invert) {
    const double pi_req = required_pi(achieved, rate);
    const json report{{"achieved_auprc", achieved},
                      {"positive_rate", rate},
                      {"required_pi", pi_req}};
    if (!out.empty()) write_json_file(out, report);
    std::cout << report.dump(2) << "\n";
    return 0;
  }
  std::ostringstream csv;
  csv << "pi,r,ceiling\n";
  for (const double r : r_values) {
    for (int i = 0; i <= grid; ++i) {
      const double pi = static_cast<double>(i) / static_cast<double>(grid);
      csv << pi << "," << r << "," << auprc_ceiling(pi, r) << "\n";
    }
  }
  if (!out.empty()) {
    write_file(out, csv.str());
    RunManifest m = start_manifest("ceiling", 0);
    manifest_add_output(m, out);
    finish_manifest(m, out);
    std::cout << "ceiling: wrote " << out << "\n";
  } else {
    std::cout << csv.str();
  }
  return 0;
}

int cmd_mpe(const std::string& stepview_path, const std::string& splits_path,
            const std::string& protocol, int horizon, double trim, int replicates,
            std::uint64_t seed, const std::string& out) {
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  RunManifest m = start_manifest("mpe", seed);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  const json report =
      run_mpe_audit(corpus, splits, protocol, horizon, trim, replicates, seed);
  write_json_file(out, report);
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "mpe: pi_hat " << report["pi_hat"] << " [" << report["ci_lower"]
            << ", " << report["ci_upper"] << "]\n";
  return 0;
}

int cmd_probe(const std::string& kind, const std::string& stepview_path,
              const std::string& splits_path, const std::string& config_path,
              const std::string& out) {
  verify_artifact(stepview_path);
  const StepViewCorpus corpus = read_stepview_jsonl(stepview_path);
  const SplitSpec splits = load_splits(splits_path);
  ControlConfig cfg;
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    cfg.horizon = j.value("horizon", cfg.horizon);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.logistic_c = j.value("logistic_c", cfg.logistic_c);
    cfg.mlp_epochs = j.value("mlp_epochs", cfg.mlp_epochs);
    cfg.mlp_hidden = j.value("mlp_hidden", cfg.mlp_hidden);
    cfg.mlp_batch = j.value("mlp_batch", cfg.mlp_batch);
    if (j.contains("monitor")) {
      cfg.monitor = MonitorConfig::from_json(j["monitor"]);
    }
  }
  RunManifest m = start_manifest("probe", cfg.seed);
  manifest_add_input(m, stepview_path);
  manifest_add_input(m, splits_path);
  const ControlReport rep = run_control(kind, corpus, splits, cfg);
  write_json_file(out, rep.to_json());
  manifest_add_output(m, out);
  finish_manifest(m, out);
  std::cout << "probe[" << kind << "]: AP " << rep.ap << ", AUROC " << rep.auroc
            << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"PrefixGuard: trace-to-monitor synthesis toolkit"};
  app.require_subcommand(1);

  // synth
  std::string synth_config, synth_out, synth_adapter_out, synth_splits_out;
  double ratios[3] = {0.8, 0.1, 0.1};
  double cal_fraction = 0.1;
  std::uint64_t split_seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", synth_config, "SynthConfig JSON");
  synth->add_option("--out", synth_out, "corpus JSONL output")->required();
  synth->add_option("--adapter-out", synth_adapter_out, "matching adapter spec");
  synth->add_option("--splits-out", synth_splits_out, "also write splits");
  synth->add_option("--train-ratio", ratios[0]);
  synth->add_option("--val-ratio", ratios[1]);
  synth->add_option("--test-ratio", ratios[2]);
  synth->add_option("--cal-fraction", cal_fraction);
  synth->add_option("--split-seed", split_seed);

  // split
  std::string split_corpus, split_out;
  std::uint64_t split_cmd_seed = 0;
  auto* split = app.add_subcommand("split", "make stratified splits");
  split->add_option("--corpus", split_corpus)->required();
  split->add_option("--out", split_out)->required();
  split->add_option("--train-ratio", ratios[0]);
  split->add_option("--val-ratio", ratios[1]);
  split->add_option("--test-ratio", ratios[2]);
  split->add_option("--cal-fraction", cal_fraction);
  split->add_option("--seed", split_cmd_seed);

  // convert
  std::string conv_corpus, conv_adapter, conv_out, conv_report;
  auto* convert = app.add_subcommand("convert", "apply an adapter spec");
  convert->add_option("--corpus", conv_corpus)->required();
  convert->add_option("--adapter", conv_adapter)->required();
  convert->add_option("--out", conv_out)->required();
  convert->add_option("--report", conv_report, "coverage report JSON");

  // fit-encoder
  std::string fe_stepview, fe_splits, fe_out;
  bool fe_probe = false;
  auto* fit_encoder = app.add_subcommand("fit-encoder", "fit the frozen vectorizer");
  fit_encoder->add_option("--stepview", fe_stepview)->required();
  fit_encoder->add_option("--splits", fe_splits)->required();
  fit_encoder->add_option("--out", fe_out)->required();
  fit_encoder->add_flag("--probe", fe_probe, "probe variant settings");

  // train
  std::string tr_stepview, tr_splits, tr_config, tr_out, tr_vectorizer;
  std::int64_t tr_seed = -1;
  auto* train = app.add_subcommand("train", "train a prefix-warning monitor");
  train->add_option("--stepview", tr_stepview)->required();
  train->add_option("--splits", tr_splits)->required();
  train->add_option("--config", tr_config, "MonitorConfig JSON");
  train->add_option("--out-dir", tr_out)->required();
  train->add_option("--vectorizer", tr_vectorizer, "prebuilt vectorizer artifact");
  train->add_option("--seed", tr_seed, "override config seed");

  // eval
  std::string ev_model, ev_stepview, ev_splits, ev_split = "test";
  std::string ev_policy = "f1", ev_out, ev_curves, ev_risk;
  std::vector<double> ev_caps = {0.05, 0.10, 0.20};
  bool ev_insample = false;
  auto* eval = app.add_subcommand("eval", "locked-split evaluation");
  eval->add_option("--model", ev_model)->required();
  eval->add_option("--stepview", ev_stepview)->required();
  eval->add_option("--splits", ev_splits)->required();
  eval->add_option("--split", ev_split, "train|calibration|validation|test");
  eval->add_option("--policy", ev_policy, "f1 or far:<cap>");
  eval->add_option("--far-caps", ev_caps, "first-alert FAR caps");
  eval->add_option("--out", ev_out)->required();
  eval->add_option("--curves-prefix", ev_curves, "write PR/ROC CSVs");
  eval->add_option("--risk-out", ev_risk, "per-trajectory risk series JSONL");
  eval->add_flag("--allow-insample", ev_insample);

  // extract-dfa
  std::string xd_model, xd_stepview, xd_splits, xd_out, xd_route;
  std::string xd_samples = "full";
  int xd_min_count = 10;
  auto* extract = app.add_subcommand("extract-dfa", "post-hoc DFA extraction");
  extract->add_option("--model", xd_model)->required();
  extract->add_option("--stepview", xd_stepview)->required();
  extract->add_option("--splits", xd_splits)->required();
  extract->add_option("--min-count", xd_min_count);
  extract->add_option("--samples", xd_samples, "full|prefix induction samples");
  extract->add_option("--route-key", xd_route, "routed extraction key");
  extract->add_option("--out", xd_out)->required();

  // audit
  std::string au_dfa, au_model, au_stepview, au_splits, au_out;
  auto* audit = app.add_subcommand("audit", "DFA audit statistics");
  audit->add_option("--dfa", au_dfa)->required();
  audit->add_option("--model", au_model)->required();
  audit->add_option("--stepview", au_stepview)->required();
  audit->add_option("--splits", au_splits)->required();
  audit->add_option("--out", au_out)->required();

  // ceiling
  bool ce_invert = false;
  std::vector<double> ce_invert_args;
  std::vector<double> ce_r = {0.363};
  int ce_grid = 100;
  std::string ce_out;
  auto* ceiling = app.add_subcommand("ceiling", "observability ceiling curves");
  ceiling->add_option("--invert", ce_invert_args,
                      "achieved AUPRC and positive rate")
      ->expected(2);
  ceiling->add_option("--r", ce_r, "positive-prefix rates for the grid");
  ceiling->add_option("--grid", ce_grid, "points per curve");
  ceiling->add_option("--out", ce_out);

  // mpe
  std::string mp_stepview, mp_splits, mp_out;
  std::string mp_protocol = "matched_nonterminal";
  int mp_horizon = 3, mp_replicates = 200;
  double mp_trim = 0.2;
  std::uint64_t mp_seed = 0;
  auto* mpe = app.add_subcommand("mpe", "observable-fraction estimate");
  mpe->add_option("--stepview", mp_stepview)->required();
  mpe->add_option("--splits", mp_splits)->required();
  mpe->add_option("--protocol", mp_protocol, "all_prefix|matched_nonterminal");
  mpe->add_option("--horizon", mp_horizon);
  mpe->add_option("--trim", mp_trim);
  mpe->add_option("--replicates", mp_replicates);
  mpe->add_option("--seed", mp_seed);
  mpe->add_option("--out", mp_out)->required();

  // probe
  std::string pr_kind, pr_stepview, pr_splits, pr_config, pr_out;
  auto* probe = app.add_subcommand("probe", "diagnostic controls");
  probe->add_option("--kind", pr_kind,
                    "t_only|t_plus_T_oracle|task_prior|tfidf_lr|pooled_mlp|scrambled")
      ->required();
  probe->add_option("--stepview", pr_stepview)->required();
  probe->add_option("--splits", pr_splits)->required();
  probe->add_option("--config", pr_config, "ControlConfig JSON");
  probe->add_option("--out", pr_out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_config, synth_out, synth_adapter_out, synth_splits_out,
                       ratios[0], ratios[1], ratios[2], cal_fraction, split_seed);
    }
    if (split->parsed()) {
      return cmd_split(split_corpus, split_out, ratios[0], ratios[1], ratios[2],
                       cal_fraction, split_cmd_seed);
    }
    if (convert->parsed()) {
      return cmd_convert(conv_corpus, conv_adapter, conv_out, conv_report);
    }
    if (fit_encoder->parsed()) {
      return cmd_fit_encoder(fe_stepview, fe_splits, fe_out, fe_probe);
    }
    if (train->parsed()) {
      return cmd_train(tr_stepview, tr_splits, tr_config, tr_out, tr_vectorizer,
                       tr_seed);
    }
    if (eval->parsed()) {
      return cmd_eval(ev_model, ev_stepview, ev_splits, ev_split, ev_policy,
                      ev_caps, ev_out, ev_curves, ev_risk, ev_insample);
    }
    if (extract->parsed()) {
      return cmd_extract_dfa(xd_model, xd_stepview, xd_splits, xd_min_count,
                             xd_samples, xd_route, xd_out);
    }
    if (audit->parsed()) {
      return cmd_audit(au_dfa, au_model, au_stepview, au_splits, au_out);
    }
    if (ceiling->parsed()) {
      ce_invert = ce_invert_args.size() == 2;
      return cmd_ceiling(ce_invert, ce_invert ? ce_invert_args[0] : 0.0,
                         ce_invert ? ce_invert_args[1] : 0.0, ce_grid, ce_r, ce_out);
    }
    if (mpe->parsed()) {
      return cmd_mpe(mp_stepview, mp_splits, mp_protocol, mp_horizon, mp_trim,
                     mp_replicates, mp_seed, mp_out);
    }
    if (probe->parsed()) {
      return cmd_probe(pr_kind, pr_stepview, pr_splits, pr_config, pr_out);
    }
    std::cerr << "error: no command\n";
    return 2;
  } catch (const input_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace prefixguard
