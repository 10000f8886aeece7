#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefixguard {

// Deterministic finite automaton over the learned symbol alphabet with
// calibrated per-state risks. Transitions are total: symbols with no
// learned edge route to an explicit untrusted sink.
struct Dfa {
  int alphabet_size = 0;
  int initial = 0;
  int sink = 0;
  std::vector<std::vector<int>> transitions;  // [state][symbol] -> state
  std::vector<char> accepting;                // RPNI labels (1 accept)
  std::vector<double> risk;
  std::vector<std::int64_t> calibration_count;
  std::vector<char> trusted;
  int min_count = 10;
  double global_prevalence = 0.0;
  std::string source_model_hash;

  int state_count() const { return static_cast<int>(transitions.size()); }
  int step(int state, int symbol) const;
  bool accepts(const std::vector<int>& symbols) const;

  nlohmann::json to_json() const;
  static Dfa from_json(const nlohmann::json& j);
};

// One symbolized trajectory with its outcome and warning labels.
struct SymbolTrajectory {
  std::string trajectory_id;
  int outcome = 1;
  std::vector<int> symbols;
  std::vector<int> labels;
};

enum class InductionSamples {
  kFullTrajectories,  // strings labeled positive iff the trajectory failed
  kPrefixes,          // every prefix, labeled by its warning target
};

// RPNI with red-blue merging in canonical (breadth-first) order.
// Exact-duplicate strings appearing with both labels are removed before
// the prefix-tree is built. Deterministic for a fixed input multiset.
Dfa induce_dfa(const std::vector<SymbolTrajectory>& training, int alphabet_size,
               InductionSamples mode = InductionSamples::kFullTrajectories);

// The ambiguity filter alone, exposed for diagnostics: returns consistent
// labeled strings (deduplicated) and the number of conflicting strings
// removed.
struct FilteredSamples {
  std::vector<std::pair<std::vector<int>, bool>> strings;  // sequence, positive
  std::int64_t conflicts_removed = 0;
};
FilteredSamples filter_ambiguous(const std::vector<SymbolTrajectory>& training,
                                 InductionSamples mode);

// Routes every calibration prefix to its end state; risk is the positive
// fraction, states under min_count are untrusted, unreached states fall
// back to the global prevalence.
Dfa calibrate_state_risks(Dfa dfa, const std::vector<SymbolTrajectory>& calibration,
                          int min_count = 10);

struct DfaRiskSeries {
  std::string trajectory_id;
  std::vector<double> scores;
  std::vector<bool> abstain;
};

// Walks the transitions and emits the calibrated state risk per step;
// untrusted states set the abstain flag and emit the fallback risk.
enum class AbstainFallback { kGlobalPrevalence, kZero };
DfaRiskSeries dfa_score_prefix(const Dfa& dfa, const SymbolTrajectory& trajectory,
                               AbstainFallback fallback = AbstainFallback::kGlobalPrevalence);

struct DfaAuditReport {
  int state_count = 0;
  int trusted_state_count = 0;
  double trusted_prefix_share = 0.0;
  int warning_state_count = 0;
  double top5_share = 0.0;
  double max_trusted_risk = 0.0;
  double abstention_rate = 0.0;

  nlohmann::json to_json() const;
};

// Audit over test prefixes; the warning threshold comes from the monitor
// module's threshold selection on calibrated DFA risks.
DfaAuditReport audit_dfa(const Dfa& dfa, const std::vector<SymbolTrajectory>& test,
                         double warning_threshold);

struct RoutedDfa {
  std::string route_key;
  std::map<std::string, Dfa> routes;
  std::map<std::string, double> route_prior;  // calibration positive rate
  double global_prior = 0.0;
  int min_count = 10;

  nlohmann::json to_json() const;
  static RoutedDfa from_json(const nlohmann::json& j);
};

// Per-route induction and calibration. Route values must be deployment
// visible (available at step 1); unseen routes at scoring time fall back
// to the global prior with abstention.
RoutedDfa induce_routed_dfa(
    const std::vector<std::pair<std::string, SymbolTrajectory>>& train_by_route,
    const std::vector<std::pair<std::string, SymbolTrajectory>>& cal_by_route,
    int alphabet_size, int min_count,
    InductionSamples mode = InductionSamples::kFullTrajectories);

DfaRiskSeries routed_dfa_score(const RoutedDfa& routed, const std::string& route,
                               const SymbolTrajectory& trajectory);

// Route-only baseline: every prefix of a route scores the route's constant
// calibration positive rate.
DfaRiskSeries route_prior_score(const RoutedDfa& routed, const std::string& route,
                                const SymbolTrajectory& trajectory);

}  // namespace prefixguard
