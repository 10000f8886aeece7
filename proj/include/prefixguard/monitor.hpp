#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefixguard/encoder.hpp"
#include "prefixguard/metrics.hpp"
#include "prefixguard/stepview.hpp"

namespace prefixguard {

struct MonitorConfig {
  int alphabet_size = 16;       // K
  int state_budget = 16;        // Q, matched to K by default
  int symbolizer_hidden = 128;
  double gumbel_temperature = 0.5;
  double lambda_pred = 1.0;
  double lambda_balance = 0.1;
  double beta = 1.0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int epochs = 24;
  int eval_every = 1;
  int max_sequence_length = 64;  // training keeps the most recent steps
  int horizon = 3;
  std::string backend = "gru";   // gru | fsm
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MonitorConfig from_json(const nlohmann::json& j);
};

// A trajectory after StepView serialization and encoding: one sparse
// vector per step plus the warning labels computed on the full length.
struct EncodedTrajectory {
  std::string trajectory_id;
  int outcome = 1;
  std::vector<SparseVec> steps;
  std::vector<int> labels;
};

std::vector<EncodedTrajectory> encode_corpus(const StepViewCorpus& corpus,
                                             const VectorizerModel& vectorizer,
                                             int horizon);

struct MonitorModel {
  MonitorConfig config;
  std::string vectorizer_hash;
  std::uint64_t training_seed = 0;

  // Symbolizer: logits = w2 * GELU(w1 * e).
  Eigen::MatrixXd w1;  // hidden x d
  Eigen::MatrixXd w2;  // K x hidden

  // GRU backend: x = GELU(proj * alpha); update/reset-gate cell of width Q.
  Eigen::MatrixXd proj;                    // Q x K
  Eigen::MatrixXd wz, uz, wr, ur, wh, uh;  // Q x Q
  Eigen::MatrixXd bz, br, bh;              // Q x 1

  // Soft-FSM backend.
  std::vector<Eigen::MatrixXd> transitions;  // K matrices, Q x Q
  Eigen::MatrixXd initial_logits;            // Q x 1

  // Scoring head.
  Eigen::MatrixXd head_w;  // Q x 1
  Eigen::MatrixXd head_b;  // 1 x 1

  void save(const std::string& directory) const;
  static MonitorModel load(const std::string& directory);
};

struct RiskSeries {
  std::string trajectory_id;
  std::vector<double> scores;
  std::vector<int> symbols;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> pred_part;
  std::vector<double> balance_part;
  std::vector<double> val_auprc;
  int best_epoch = -1;  // 0-based
  double best_val_auprc = 0.0;
  std::string best_checkpoint_id;

  nlohmann::json to_json() const;
};

struct TrainResult {
  MonitorModel model;
  TrainReport report;
};

// kAllPositions is the standard objective over every prefix position.
// kFinalPosition supervises only each sequence's last step; the scrambled
// confound control trains on prefix-expanded examples this way.
enum class LossPositions { kAllPositions, kFinalPosition };

// Joint training of the symbolizer and the selected backend against the
// prefix-warning objective, with per-epoch validation AUPRC checkpointing.
// The calibration set is not touched by optimization; it is validated here
// (nonempty, disjoint from train) so threshold selection stays honest.
TrainResult train_monitor(const std::vector<EncodedTrajectory>& train,
                          const std::vector<EncodedTrajectory>& calibration,
                          const std::vector<EncodedTrajectory>& validation,
                          const MonitorConfig& config,
                          const std::string& vectorizer_hash,
                          int feature_dimension,
                          LossPositions positions = LossPositions::kAllPositions);

// Causal per-prefix risk scores and hard symbols (deterministic symbol
// path). Scores at step t depend only on steps 1..t.
RiskSeries score_prefix(const MonitorModel& model,
                        const EncodedTrajectory& trajectory);

// Hard symbols z_t = argmax of the deterministic symbol logits; ties break
// toward the lowest index.
std::vector<int> hard_symbolize(const MonitorModel& model,
                                const EncodedTrajectory& trajectory);

// Scores a whole corpus into the pooled prefix set used by the metrics.
ScoredPrefixSet score_corpus(const MonitorModel& model,
                             const std::vector<EncodedTrajectory>& corpus);

void require_vectorizer(const MonitorModel& model, const VectorizerModel& vec);

struct ThresholdPolicy {
  enum class Kind { kF1, kFarCap } kind = Kind::kF1;
  double far_cap = 0.1;

  static ThresholdPolicy f1() { return {Kind::kF1, 0.0}; }
  static ThresholdPolicy far(double cap) { return {Kind::kFarCap, cap}; }
};

struct ThresholdResult {
  double gamma = 0.0;
  bool unattainable = false;  // far cap impossible; gamma is +infinity
};

// f1: gamma maximizing prefix F1 over the observed calibration scores and
// their midpoints. far_cap(c): smallest gamma whose calibration
// successful-trajectory FAR is <= c; +infinity sentinel when unattainable.
ThresholdResult select_threshold(const ScoredPrefixSet& calibration,
                                 const ThresholdPolicy& policy);

}  // namespace prefixguard
