#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefixguard/encoder.hpp"
#include "prefixguard/monitor.hpp"
#include "prefixguard/stepview.hpp"
#include "prefixguard/trace.hpp"

namespace prefixguard {

// L2-regularized logistic regression fitted by L-BFGS to gradient norm
// below 1e-6. The penalty is (1/(2C)) * ||w||^2 on the weights only.
struct LogisticModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double inverse_regularization = 0.5;
  bool balanced = true;
  std::uint64_t seed = 0;
  double final_gradient_norm = 0.0;

  double decision(const SparseVec& x) const;
  double probability(const SparseVec& x) const;
};

LogisticModel fit_logistic(const std::vector<SparseVec>& features,
                           const std::vector<int>& labels, int dimension,
                           double inverse_regularization = 0.5,
                           bool balanced = true, std::uint64_t seed = 0);

// Objective and gradient of the fitted problem, for optimality checks.
double logistic_objective(const LogisticModel& model,
                          const std::vector<SparseVec>& features,
                          const std::vector<int>& labels,
                          Eigen::VectorXd* gradient_out = nullptr);

// Deployment-realistic position features [t, t^2, ln(1+t), sqrt(t)].
Eigen::Vector4d position_features(int t);

struct ControlConfig {
  int horizon = 3;
  std::uint64_t seed = 0;
  double logistic_c = 0.5;
  int mlp_epochs = 10;
  int mlp_hidden = 128;
  int mlp_batch = 256;
  MonitorConfig monitor;  // used by the scrambled control retrain
};

struct ControlReport {
  std::string kind;
  double ap = 0.0;
  double auroc = 0.0;
  nlohmann::json extra;

  nlohmann::json to_json() const;
};

// Confound controls and supervised probes; `kind` is one of t_only,
// t_plus_T_oracle, task_prior, tfidf_lr, pooled_mlp, scrambled. Probes see
// only raw/StepView data and labels, never monitor weights or scores.
ControlReport run_control(const std::string& kind, const StepViewCorpus& corpus,
                          const SplitSpec& splits, const ControlConfig& config);

struct MpeAuditSet {
  std::string protocol;  // all_prefix | matched_nonterminal
  std::vector<std::string> positive_texts;
  std::vector<std::string> negative_texts;
  // provenance: trajectory id and step index per text
  std::vector<std::pair<std::string, int>> positive_provenance;
  std::vector<std::pair<std::string, int>> negative_provenance;
};

// Prefix text is the chronological concatenation of status, action_text,
// and result_text only (1200 chars per step, most recent 5000 per prefix).
// all_prefix labels every prefix by the warning target; matched_nonterminal
// keeps only non-terminal prefixes in the near-end window T-H <= t < T.
MpeAuditSet build_mpe_audit_set(const StepViewCorpus& corpus,
                                const std::string& protocol, int horizon = 3);

// Full observability audit: probe vectorizer and logistic probe fitted on
// training prefixes, scores on the held-out audit set, trimmed CDF-ratio
// estimate with bootstrap interval.
nlohmann::json run_mpe_audit(const StepViewCorpus& corpus, const SplitSpec& splits,
                             const std::string& protocol, int horizon,
                             double tail_trim, int replicates, std::uint64_t seed);

}  // namespace prefixguard
