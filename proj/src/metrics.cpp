#include "prefixguard/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include "prefixguard/common.hpp"

namespace prefixguard {

namespace {

// Scores sorted descending with the positive count per distinct score.
struct TieBlocks {
  std::vector<double> score;       // distinct scores, descending
  std::vector<std::int64_t> pos;   // positives at this score
  std::vector<std::int64_t> tot;   // prefixes at this score
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

TieBlocks tie_blocks(const ScoredPrefixSet& set) {
  std::vector<std::pair<double, int>> rows;
  rows.reserve(set.size());
  for (const auto& p : set) {
    if (p.abstain) continue;
    rows.emplace_back(p.score, p.label);
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  TieBlocks b;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    std::int64_t pos = 0;
    while (j < rows.size() && rows[j].first == rows[i].first) {
      pos += rows[j].second;
      ++j;
    }
    b.score.push_back(rows[i].first);
    b.pos.push_back(pos);
    b.tot.push_back(static_cast<std::int64_t>(j - i));
    b.n_pos += pos;
    b.n_neg += static_cast<std::int64_t>(j - i) - pos;
    i = j;
  }
  return b;
}

void require_both_classes(const TieBlocks& b, const char* metric) {
  if (b.n_pos == 0 || b.n_neg == 0) {
    throw input_error(std::string(metric) + " undefined: needs both classes");
  }
}

}  // namespace

double average_precision(const ScoredPrefixSet& set) {
  const TieBlocks b = tie_blocks(set);
  require_both_classes(b, "average precision");
  double ap = 0.0;
  std::int64_t tp = 0, seen = 0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < b.score.size(); ++k) {
    tp += b.pos[k];
    seen += b.tot[k];
    const double recall = static_cast<double>(tp) / static_cast<double>(b.n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double auroc(const ScoredPrefixSet& set) {
  const TieBlocks b = tie_blocks(set);
  require_both_classes(b, "AUROC");
  // Sum over distinct scores of pos_here * (negatives below + half the ties).
  double num = 0.0;
  std::int64_t neg_below = b.n_neg;
  for (std::size_t k = 0; k < b.score.size(); ++k) {
    const std::int64_t neg_here = b.tot[k] - b.pos[k];
    neg_below -= neg_here;
    num += static_cast<double>(b.pos[k]) *
           (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
  }
  return num / (static_cast<double>(b.n_pos) * static_cast<double>(b.n_neg));
}

double ece(const ScoredPrefixSet& set, int bins) {
  if (set.empty()) throw input_error("ECE undefined on empty set");
  if (bins < 1) throw input_error("ECE needs at least one bin");
  std::vector<std::int64_t> count(bins, 0);
  std::vector<double> conf(bins, 0.0), acc(bins, 0.0);
  std::int64_t n = 0;
  for (const auto& p : set) {
    // Right-closed bins: (m/M, (m+1)/M], score 0 in the first bin.
    int idx = static_cast<int>(std::ceil(p.score * bins)) - 1;
    idx = std::clamp(idx, 0, bins - 1);
    ++count[idx];
    conf[idx] += p.score;
    acc[idx] += p.label;
    ++n;
  }
  double e = 0.0;
  for (int m = 0; m < bins; ++m) {
    if (count[m] == 0) continue;
    const double w = static_cast<double>(count[m]) / static_cast<double>(n);
    e += w * std::abs(acc[m] / count[m] - conf[m] / count[m]);
  }
  return e;
}

double brier(const ScoredPrefixSet& set) {
  if (set.empty()) throw input_error("Brier undefined on empty set");
  double s = 0.0;
  for (const auto& p : set) {
    const double d = p.score - p.label;
    s += d * d;
  }
  return s / static_cast<double>(set.size());
}

OperatingPoint confusion_at(const ScoredPrefixSet& set, double gamma) {
  OperatingPoint op;
  op.gamma = gamma;
  for (const auto& p : set) {
    const bool alert = !std::isinf(gamma) && p.score >= gamma;
    if (alert && p.label == 1) ++op.tp;
    else if (alert && p.label == 0) ++op.fp;
    else if (!alert && p.label == 0) ++op.tn;
    else ++op.fn;
  }
  const std::int64_t n = op.tp + op.fp + op.tn + op.fn;
  if (n > 0) op.accuracy = static_cast<double>(op.tp + op.tn) / n;
  if (op.tp + op.fp > 0) op.precision = static_cast<double>(op.tp) / (op.tp + op.fp);
  if (op.tp + op.fn > 0) op.recall = static_cast<double>(op.tp) / (op.tp + op.fn);
  if (op.precision && op.recall && (*op.precision + *op.recall) > 0.0) {
    op.f1 = 2.0 * *op.precision * *op.recall / (*op.precision + *op.recall);
  }
  if (op.fp + op.tn > 0) op.fpr = static_cast<double>(op.fp) / (op.fp + op.tn);
  return op;
}

FirstAlertReport first_alert_diagnostics(const std::vector<TrajectoryScores>& series,
                                         double gamma, int horizon) {
  FirstAlertReport r;
  r.gamma = gamma;
  std::int64_t n_success = 0, n_fail = 0;
  std::int64_t success_alerted = 0, fail_alerted = 0, fail_early = 0;
  double lead_sum = 0.0;
  for (const auto& traj : series) {
    int first_alert = 0;  // 1-based; 0 means none
    if (!std::isinf(gamma)) {
      for (std::size_t t = 0; t < traj.scores.size(); ++t) {
        if (traj.scores[t] >= gamma) {
          first_alert = static_cast<int>(t) + 1;
          break;
        }
      }
    }
    const int T = static_cast<int>(traj.scores.size());
    if (traj.outcome == 1) {
      ++n_success;
      if (first_alert > 0) ++success_alerted;
    } else {
      ++n_fail;
      if (first_alert > 0) {
        ++fail_alerted;
        if (first_alert < T - horizon) ++fail_early;
        lead_sum += static_cast<double>(T - first_alert) / static_cast<double>(T);
      }
      // missed failure contributes lead time 0
    }
  }
  if (n_success > 0) r.far = static_cast<double>(success_alerted) / n_success;
  if (n_fail > 0) {
    r.fail_alert_recall = static_cast<double>(fail_alerted) / n_fail;
    r.early_fail_recall = static_cast<double>(fail_early) / n_fail;
    r.mean_lead_time = lead_sum / static_cast<double>(n_fail);
  }
  r.alerted_trajectories = success_alerted + fail_alerted;
  if (r.alerted_trajectories > 0) {
    r.alert_precision =
        static_cast<double>(fail_alerted) / static_cast<double>(r.alerted_trajectories);
  }
  return r;
}

std::vector<TrajectoryScores> group_by_trajectory(const ScoredPrefixSet& set) {
  std::map<std::string, std::vector<std::pair<int, std::pair<double, int>>>> acc;
  for (const auto& p : set) {
    acc[p.trajectory_id].push_back({p.step, {p.score, p.outcome}});
  }
  std::vector<TrajectoryScores> out;
  out.reserve(acc.size());
  for (auto& [id, rows] : acc) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    TrajectoryScores t;
    t.trajectory_id = id;
    t.outcome = rows.front().second.second;
    for (const auto& r : rows) t.scores.push_back(r.second.first);
    out.push_back(std::move(t));
  }
  return out;
}

double positive_rate(const ScoredPrefixSet& set) {
  if (set.empty()) throw input_error("positive rate undefined on empty set");
  std::int64_t pos = 0;
  for (const auto& p : set) pos += p.label;
  return static_cast<double>(pos) / static_cast<double>(set.size());
}

std::int64_t abstained_count(const ScoredPrefixSet& set) {
  std::int64_t n = 0;
  for (const auto& p : set) n += p.abstain ? 1 : 0;
  return n;
}

std::vector<std::array<double, 3>> pr_curve(const ScoredPrefixSet& set) {
  const TieBlocks b = tie_blocks(set);
  require_both_classes(b, "PR curve");
  std::vector<std::array<double, 3>> pts;
  std::int64_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < b.score.size(); ++k) {
    tp += b.pos[k];
    seen += b.tot[k];
    pts.push_back({static_cast<double>(tp) / b.n_pos,
                   static_cast<double>(tp) / seen, b.score[k]});
  }
  return pts;
}

std::vector<std::array<double, 3>> roc_curve(const ScoredPrefixSet& set) {
  const TieBlocks b = tie_blocks(set);
  require_both_classes(b, "ROC curve");
  std::vector<std::array<double, 3>> pts;
  std::int64_t tp = 0, fp = 0;
  pts.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  for (std::size_t k = 0; k < b.score.size(); ++k) {
    tp += b.pos[k];
    fp += b.tot[k] - b.pos[k];
    pts.push_back({static_cast<double>(fp) / b.n_neg,
                   static_cast<double>(tp) / b.n_pos, b.score[k]});
  }
  return pts;
}

nlohmann::json metrics_report(const ScoredPrefixSet& set, double gamma) {
  const OperatingPoint op = confusion_at(set, gamma);
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  ScoredPrefixSet ranked;
  for (const auto& p : set) {
    if (!p.abstain) ranked.push_back(p);
  }
  return nlohmann::json{
      {"n", set.size()},
      {"n_abstained", abstained_count(set)},
      {"positive_rate", positive_rate(set)},
      {"ap", average_precision(set)},
      {"auroc", auroc(set)},
      {"ece", ranked.empty() ? nlohmann::json(nullptr) : nlohmann::json(ece(ranked))},
      {"brier", ranked.empty() ? nlohmann::json(nullptr) : nlohmann::json(brier(ranked))},
      {"gamma", std::isinf(gamma) ? nlohmann::json("inf") : nlohmann::json(gamma)},
      {"accuracy", opt(op.accuracy)},
      {"precision", opt(op.precision)},
      {"recall", opt(op.recall)},
      {"f1", opt(op.f1)},
      {"fpr", opt(op.fpr)},
      {"tp", op.tp}, {"fp", op.fp}, {"tn", op.tn}, {"fn", op.fn}};
}

}  // namespace prefixguard
