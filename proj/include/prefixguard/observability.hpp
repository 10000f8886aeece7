#pragma once

#include <cstdint>
#include <vector>

#include "prefixguard/metrics.hpp"

namespace prefixguard {

// Population AUPRC ceiling when only a fraction `pi` of positive prefixes
// is distributionally distinguishable from negatives, at positive rate `r`:
//
//   A(pi, r) = pi + r(1-pi)^2 / (1-pi*r)
//                 + r*pi*(1-pi)*(1-r) / (1-pi*r)^2 * ln(1/(pi*r))
//
// with A(0, r) = r and A(1, r) = 1.
double auprc_ceiling(double pi, double r);

// Best attainable precision at recall level `s` under the same mixture:
// 1 for s <= pi, then the minimum-FPR branch.
double prec_max(double s, double pi, double r);

// Smallest pi whose ceiling reaches the achieved AUPRC `a` at rate `r`.
// The ceiling is strictly increasing in pi, so bisection to 1e-6 suffices.
// Rejects a outside [r, 1] beyond a small tolerance.
double required_pi(double a, double r);

// Samples the ceiling-attaining instance: observable positives score
// Uniform(1,2); hidden positives and negatives score Uniform(0,1).
// Labels are positive with probability r, observable with probability pi.
ScoredPrefixSet sample_tight_instance(double pi, double r, std::int64_t n,
                                      std::uint64_t seed);

struct MpeResult {
  double pi_hat = 0.0;
  double kappa_hat = 1.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int replicates = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
};

// Trimmed lower-tail CDF-ratio estimator: kappa = min over thresholds t
// with F-(t) >= trim of F+(t)/F-(t), evaluated at the pooled empirical
// support; pi = 1 - clip[0,1](kappa).
MpeResult mpe_estimate(const std::vector<double>& positive_scores,
                       const std::vector<double>& negative_scores,
                       double tail_trim = 0.2);

// Percentile bootstrap (classes resampled independently) around the
// point estimate; 2.5/97.5 interval.
MpeResult mpe_bootstrap(const std::vector<double>& positive_scores,
                        const std::vector<double>& negative_scores,
                        int replicates = 200, std::uint64_t seed = 0,
                        double tail_trim = 0.2);

struct EvidenceAnchor {
  double pi_e = 0.0;
  bool degenerate = false;  // q_minus == 1
};

// max{0, (q_plus - q_minus) / (1 - q_minus)} from explicit-evidence rates.
EvidenceAnchor explicit_evidence_anchor(double q_plus, double q_minus);

}  // namespace prefixguard
