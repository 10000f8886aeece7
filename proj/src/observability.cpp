#include "prefixguard/observability.hpp"

#include <algorithm>
#include <cmath>

#include "prefixguard/common.hpp"

namespace prefixguard {

double auprc_ceiling(double pi, double r) {
  if (!(r > 0.0 && r < 1.0)) throw input_error("ceiling: r must lie in (0,1)");
  if (pi < 0.0 || pi > 1.0) throw input_error("ceiling: pi must lie in [0,1]");
  if (pi == 0.0) return r;
  if (pi == 1.0) return 1.0;
  const double one_minus_pir = 1.0 - pi * r;
  return pi + r * (1.0 - pi) * (1.0 - pi) / one_minus_pir +
         r * pi * (1.0 - pi) * (1.0 - r) / (one_minus_pir * one_minus_pir) *
             std::log(1.0 / (pi * r));
}

double prec_max(double s, double pi, double r) {
  if (s < 0.0 || s > 1.0) throw input_error("prec_max: recall must lie in [0,1]");
  if (s <= pi) return 1.0;
  const double num = r * s * (1.0 - pi);
  return num / (num + (1.0 - r) * (s - pi));
}

double required_pi(double a, double r) {
  if (!(r > 0.0 && r < 1.0)) throw input_error("required_pi: r must lie in (0,1)");
  constexpr double tol = 1e-9;
  if (a < r - 1e-6 || a > 1.0 + 1e-6) {
    throw input_error("required_pi: achieved AUPRC outside [r, 1]");
  }
  if (a <= r) return 0.0;
  if (a >= 1.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-6 * 0.5) {
    const double mid = 0.5 * (lo + hi);
    if (auprc_ceiling(mid, r) >= a - tol) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

ScoredPrefixSet sample_tight_instance(double pi, double r, std::int64_t n,
                                      std::uint64_t seed) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw input_error("tight instance: pi in [0,1]");
  if (!(r > 0.0 && r < 1.0)) throw input_error("tight instance: r in (0,1)");
  if (n < 1) throw input_error("tight instance: n >= 1");
  Rng rng(seed);
  ScoredPrefixSet set;
  set.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    ScoredPrefix p;
    p.trajectory_id = "tight." + std::to_string(i);
    p.step = 1;
    p.length = 1;
    p.label = rng.bernoulli(r) ? 1 : 0;
    p.outcome = p.label ? 0 : 1;
    const bool observable = p.label == 1 && rng.bernoulli(pi);
    p.score = observable ? rng.uniform(1.0, 2.0) : rng.uniform(0.0, 1.0);
    set.push_back(std::move(p));
  }
  return set;
}

namespace {

// kappa over the pooled support: walk both sorted score arrays once.
double trimmed_cdf_ratio(std::vector<double> pos, std::vector<double> neg,
                         double trim) {
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> support;
  support.reserve(pos.size() + neg.size());
  support.insert(support.end(), pos.begin(), pos.end());
  support.insert(support.end(), neg.begin(), neg.end());
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());

  double kappa = 1.0;
  std::size_t ip = 0, in = 0;
  for (const double t : support) {
    while (ip < pos.size() && pos[ip] <= t) ++ip;
    while (in < neg.size() && neg[in] <= t) ++in;
    const double f_neg = static_cast<double>(in) / static_cast<double>(neg.size());
    if (f_neg < trim) continue;
    const double f_pos = static_cast<double>(ip) / static_cast<double>(pos.size());
    kappa = std::min(kappa, f_pos / f_neg);
  }
  return kappa;
}

}  // namespace

MpeResult mpe_estimate(const std::vector<double>& positive_scores,
                       const std::vector<double>& negative_scores,
                       double tail_trim) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw input_error("mpe_estimate: both score arrays must be nonempty");
  }
  MpeResult r;
  r.n_positive = positive_scores.size();
  r.n_negative = negative_scores.size();
  r.kappa_hat = trimmed_cdf_ratio(positive_scores, negative_scores, tail_trim);
  r.pi_hat = 1.0 - std::clamp(r.kappa_hat, 0.0, 1.0);
  r.ci_lower = r.pi_hat;
  r.ci_upper = r.pi_hat;
  return r;
}

MpeResult mpe_bootstrap(const std::vector<double>& positive_scores,
                        const std::vector<double>& negative_scores,
                        int replicates, std::uint64_t seed, double tail_trim) {
  MpeResult point = mpe_estimate(positive_scores, negative_scores, tail_trim);
  std::vector<double> pis(replicates);
  for (int b = 0; b < replicates; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<double> pos(positive_scores.size()), neg(negative_scores.size());
    for (auto& v : pos) v = positive_scores[rng.bounded(positive_scores.size())];
    for (auto& v : neg) v = negative_scores[rng.bounded(negative_scores.size())];
    const double kappa = trimmed_cdf_ratio(std::move(pos), std::move(neg), tail_trim);
    pis[b] = 1.0 - std::clamp(kappa, 0.0, 1.0);
  }
  std::sort(pis.begin(), pis.end());
  auto quantile = [&](double q) {
    const double pos_idx = q * static_cast<double>(replicates - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos_idx));
    const auto hi = std::min(lo + 1, pis.size() - 1);
    const double w = pos_idx - static_cast<double>(lo);
    return (1.0 - w) * pis[lo] + w * pis[hi];
  };
  point.replicates = replicates;
  point.ci_lower = quantile(0.025);
  point.ci_upper = quantile(0.975);
  return point;
}

EvidenceAnchor explicit_evidence_anchor(double q_plus, double q_minus) {
  if (q_plus < 0.0 || q_plus > 1.0 || q_minus < 0.0 || q_minus > 1.0) {
    throw input_error("evidence anchor: rates must lie in [0,1]");
  }
  EvidenceAnchor a;
  if (q_minus >= 1.0) {
    a.pi_e = 0.0;
    a.degenerate = true;
    return a;
  }
  a.pi_e = std::max(0.0, (q_plus - q_minus) / (1.0 - q_minus));
  return a;
}

}  // namespace prefixguard
