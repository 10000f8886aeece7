#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefixguard {

// One scored prefix. `step` is 1-based; `length` is the full trajectory
// length T; `outcome` is 1 for success, 0 for failure; `label` is the
// imminent-failure target for this prefix.
struct ScoredPrefix {
  std::string trajectory_id;
  int step = 0;
  int length = 0;
  int outcome = 1;
  int label = 0;
  double score = 0.0;
  bool abstain = false;
};

using ScoredPrefixSet = std::vector<ScoredPrefix>;

// Average precision with tie groups processed as blocks: all prefixes
// sharing a score enter the ranking together, matching the step-wise
// sum over distinct thresholds. Abstained prefixes are excluded.
// Throws input_error when only one class is present.
double average_precision(const ScoredPrefixSet& set);

// Pairwise ranking statistic with half credit for score ties.
// Abstained prefixes are excluded.
double auroc(const ScoredPrefixSet& set);

// Expected calibration error over `bins` equal-width right-closed bins;
// a score of exactly 0 falls into the first bin, 1.0 into the last.
double ece(const ScoredPrefixSet& set, int bins = 15);

// Mean squared probability error.
double brier(const ScoredPrefixSet& set);

// Prefix-level operating point at threshold gamma (alert iff score >= gamma).
// Ratios with a zero denominator are left unset rather than coerced to 0.
struct OperatingPoint {
  double gamma = 0.0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> fpr;
};

OperatingPoint confusion_at(const ScoredPrefixSet& set, double gamma);

// Trajectory-level first-alert diagnostics. Lead time averages
// (T - a) / T over all failed trajectories with misses counted as 0.
struct FirstAlertReport {
  double gamma = 0.0;
  std::optional<double> far;           // successful trajectories with any alert
  double fail_alert_recall = 0.0;      // failed trajectories with any alert
  double early_fail_recall = 0.0;      // first alert strictly before T - H
  std::optional<double> alert_precision;
  double mean_lead_time = 0.0;
  std::int64_t alerted_trajectories = 0;
};

// Per-trajectory score series paired with the trajectory outcome.
struct TrajectoryScores {
  std::string trajectory_id;
  int outcome = 1;
  std::vector<double> scores;
};

FirstAlertReport first_alert_diagnostics(const std::vector<TrajectoryScores>& series,
                                         double gamma, int horizon);

// Groups a prefix set back into per-trajectory series (sorted by step).
std::vector<TrajectoryScores> group_by_trajectory(const ScoredPrefixSet& set);

double positive_rate(const ScoredPrefixSet& set);
std::int64_t abstained_count(const ScoredPrefixSet& set);

// Points of the empirical precision-recall / ROC curves at the distinct
// score thresholds, for CSV export.
std::vector<std::array<double, 3>> pr_curve(const ScoredPrefixSet& set);   // recall, precision, threshold
std::vector<std::array<double, 3>> roc_curve(const ScoredPrefixSet& set);  // fpr, tpr, threshold

// Full report row: sample stats, ranking/calibration metrics, and the
// operating point at gamma.
nlohmann::json metrics_report(const ScoredPrefixSet& set, double gamma);

}  // namespace prefixguard
