#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefixguard {

// One raw agent trajectory: ordered opaque step documents plus the
// terminal verifier outcome (1 = success, 0 = failure).
struct RawTrajectory {
  std::string trajectory_id;
  std::string task_id;
  int outcome = 1;
  std::vector<nlohmann::json> steps;

  int length() const { return static_cast<int>(steps.size()); }
};

using Corpus = std::vector<RawTrajectory>;

// Binary imminent-failure targets p_t = 1[y = 0 and t >= T - H] for
// t = 1..T (inclusive horizon; the terminal prefix is included).
struct PrefixLabelSet {
  std::string trajectory_id;
  int horizon = 0;
  std::vector<int> labels;

  int positives() const {
    int n = 0;
    for (int p : labels) n += p;
    return n;
  }
};

PrefixLabelSet label_prefixes(const RawTrajectory& trajectory, int horizon);

// Pooled positive-prefix rate over a labeled collection; equals the
// random-baseline AUPRC.
double positive_prefix_rate(const std::vector<PrefixLabelSet>& labelsets);

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> calibration_ids;  // carved out of the training pool
  std::vector<std::string> validation_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SplitSpec from_json(const nlohmann::json& j);
  bool contains_train(const std::string& id) const;
};

// Deterministic outcome-stratified split. Calibration is a fraction of the
// training pool (both classes represented when the class sizes allow it).
SplitSpec make_splits(const Corpus& corpus, double train_ratio, double val_ratio,
                      double test_ratio, double calibration_fraction,
                      std::uint64_t seed);

// Synthetic corpus with a controllable lexical failure signal: failed
// trajectories carry precursor tokens in the last `injection_window` steps
// (with the given per-trajectory probability); successes never do.
struct SynthConfig {
  int trajectory_count = 1000;
  int min_length = 6;
  int max_length = 12;
  double failure_rate = 0.3;
  std::vector<std::string> precursor_vocabulary = {
      "errcode_shutdown", "fault_cascade", "stall_timeout", "denied_lock"};
  int injection_window = 4;
  double precursor_probability = 1.0;
  std::vector<std::string> noise_vocabulary = {
      "fetch_page", "parse_table", "submit_form", "open_panel",
      "scan_index", "write_cell",  "copy_field",  "check_box"};
  // Per-step stop probability beyond min_length. A constant hazard keeps
  // the remaining-length distribution memoryless, so step position alone
  // carries almost no label information.
  double length_hazard = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

Corpus generate_synthetic_corpus(const SynthConfig& config);

// First t steps in a seed-determined permutation; outcome and ids kept.
// Never includes a step with original index > t.
RawTrajectory scramble_prefix(const RawTrajectory& trajectory, int t,
                              std::uint64_t seed);

// Corpus file format: JSON Lines, one trajectory per line.
Corpus read_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, const Corpus& corpus);
nlohmann::json trajectory_to_json(const RawTrajectory& t);
RawTrajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace prefixguard
