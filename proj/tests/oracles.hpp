#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (quadratic scans, explicit enumerations) so they can
// arbitrate the production implementations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "prefixguard/autodiff.hpp"
#include "prefixguard/metrics.hpp"

namespace oracle {

// O(n^2) average precision: recompute TP/FP from scratch at every distinct
// threshold, summing (R_k - R_{k-1}) * P_k over descending thresholds.
inline double brute_average_precision(const prefixguard::ScoredPrefixSet& set) {
  std::vector<double> thresholds;
  std::int64_t n_pos = 0;
  for (const auto& p : set) {
    if (p.abstain) continue;
    thresholds.push_back(p.score);
    n_pos += p.label;
  }
  std::sort(thresholds.rbegin(), thresholds.rend());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  double ap = 0.0, prev_recall = 0.0;
  for (const double th : thresholds) {
    std::int64_t tp = 0, fp = 0;
    for (const auto& p : set) {
      if (p.abstain || p.score < th) continue;
      if (p.label == 1) ++tp;
      else ++fp;
    }
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// O(n^2) pairwise AUROC with half credit for ties.
inline double brute_auroc(const prefixguard::ScoredPrefixSet& set) {
  double num = 0.0;
  std::int64_t n_pos = 0, n_neg = 0;
  for (const auto& a : set) {
    if (a.abstain) continue;
    if (a.label == 1) {
      ++n_pos;
      for (const auto& b : set) {
        if (b.abstain || b.label != 0) continue;
        if (a.score > b.score) num += 1.0;
        else if (a.score == b.score) num += 0.5;
      }
    } else {
      ++n_neg;
    }
  }
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol, int depth = 40) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fhi, double fmid, double whole,
          int d) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
      return left + right + (left + right - whole) / 15.0;
    }
    return rec(lo, mid, flo, fmid, flm, left, d - 1) +
           rec(mid, hi, fmid, fhi, frm, right, d - 1);
  };
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
  return rec(a, b, fa, fb, fc, whole, depth);
}

// Exhaustive search for the smallest DFA (up to `max_states` states)
// consistent with a labeled sample. States are 0..n-1, initial state 0.
// Returns the state count, or -1 when none fits. Tiny alphabets only.
struct EnumeratedDfa {
  int states = -1;
  std::vector<std::vector<int>> delta;
  std::vector<char> accepting;
};

inline bool consistent(const std::vector<std::vector<int>>& delta,
                       const std::vector<char>& accepting,
                       const std::vector<std::pair<std::vector<int>, bool>>& sample) {
  for (const auto& [seq, positive] : sample) {
    int s = 0;
    for (int sym : seq) s = delta[s][sym];
    if ((accepting[s] != 0) != positive) return false;
  }
  return true;
}

inline EnumeratedDfa smallest_consistent_dfa(
    const std::vector<std::pair<std::vector<int>, bool>>& sample, int alphabet,
    int max_states) {
  for (int n = 1; n <= max_states; ++n) {
    // enumerate transition tables (n^(n*k)) and acceptance masks (2^n)
    const std::int64_t table_count =
        static_cast<std::int64_t>(std::pow(n, n * alphabet) + 0.5);
    for (std::int64_t code = 0; code < table_count; ++code) {
      std::vector<std::vector<int>> delta(n, std::vector<int>(alphabet));
      std::int64_t c = code;
      for (int s = 0; s < n; ++s) {
        for (int a = 0; a < alphabet; ++a) {
          delta[s][a] = static_cast<int>(c % n);
          c /= n;
        }
      }
      for (int mask = 0; mask < (1 << n); ++mask) {
        std::vector<char> acc(n);
        for (int s = 0; s < n; ++s) acc[s] = (mask >> s) & 1;
        if (consistent(delta, acc, sample)) {
          return {n, delta, acc};
        }
      }
    }
  }
  return {};
}

// Central finite differences with one Richardson extrapolation step
// (O(eps^4) truncation). Sharper than the plain harness for deep
// compositions whose gradients span many orders of magnitude.
inline double richardson_grad_check(
    const std::function<prefixguard::ad::Var(prefixguard::ad::Tape&,
                                             prefixguard::ad::Var)>& f,
    const Eigen::VectorXd& x, double eps = 1e-3) {
  namespace pad = prefixguard::ad;
  Eigen::VectorXd g;
  {
    pad::Tape t;
    pad::Var xv = t.leaf(x);
    pad::Var y = f(t, xv);
    t.backward(y);
    g = xv.grad().col(0);
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto eval = [&](double d) {
      Eigen::VectorXd p = x;
      p(i) += d;
      pad::Tape t;
      return f(t, t.leaf(p)).scalar();
    };
    const double d1 = (eval(eps) - eval(-eps)) / (2.0 * eps);
    const double d2 = (eval(2.0 * eps) - eval(-2.0 * eps)) / (4.0 * eps);
    const double fd = (4.0 * d1 - d2) / 3.0;
    worst = std::max(worst, std::abs(g(i) - fd) /
                                std::max(1e-8, std::abs(g(i)) + std::abs(fd)));
  }
  return worst;
}

// Language equality over all strings up to the given length.
inline bool equivalent_up_to(
    const std::function<bool(const std::vector<int>&)>& lhs,
    const std::function<bool(const std::vector<int>&)>& rhs, int alphabet,
    int max_len) {
  std::vector<std::vector<int>> frontier = {{}};
  for (int len = 0; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier) {
      if (lhs(s) != rhs(s)) return false;
      if (len < max_len) {
        for (int a = 0; a < alphabet; ++a) {
          auto t = s;
          t.push_back(a);
          next.push_back(std::move(t));
        }
      }
    }
    frontier = std::move(next);
  }
  return true;
}

}  // namespace oracle
