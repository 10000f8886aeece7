#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "prefixguard/common.hpp"
#include "prefixguard/metrics.hpp"

using namespace prefixguard;

namespace {

ScoredPrefixSet make_set(const std::vector<std::pair<double, int>>& rows) {
  ScoredPrefixSet set;
  int i = 0;
  for (const auto& [score, label] : rows) {
    ScoredPrefix p;
    p.trajectory_id = "t" + std::to_string(i);
    p.step = 1;
    p.length = 1;
    p.label = label;
    p.outcome = label ? 0 : 1;
    p.score = score;
    set.push_back(p);
    ++i;
  }
  return set;
}

ScoredPrefixSet random_set(Rng& rng, int n, double positive_rate, int score_levels) {
  ScoredPrefixSet set;
  for (int i = 0; i < n; ++i) {
    ScoredPrefix p;
    p.trajectory_id = "r" + std::to_string(i);
    p.step = 1;
    p.length = 1;
    p.label = rng.bernoulli(positive_rate) ? 1 : 0;
    p.outcome = p.label ? 0 : 1;
    // score_levels <= 0 means continuous scores; otherwise heavy ties
    p.score = score_levels > 0
                  ? static_cast<double>(rng.bounded(score_levels)) / score_levels
                  : rng.uniform();
    set.push_back(p);
  }
  // guarantee both classes
  set[0].label = 1;
  set[0].outcome = 0;
  if (n > 1) {
    set[1].label = 0;
    set[1].outcome = 1;
  }
  return set;
}

}  // namespace

TEST_CASE("average precision: perfect ranking is 1") {
  const auto set = make_set({{0.9, 1}, {0.8, 1}, {0.3, 0}, {0.2, 0}});
  CHECK(average_precision(set) == doctest::Approx(1.0));
}

TEST_CASE("average precision: matches brute force on random sets with ties") {
  Rng rng(20240817);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 50 + static_cast<int>(rng.bounded(1951));
    const int levels = (trial % 2 == 0) ? 6 : 0;  // alternate heavy-tie cases
    const auto set = random_set(rng, n, 0.2, levels);
    const double got = average_precision(set);
    const double want = oracle::brute_average_precision(set);
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("average precision: random scores concentrate near prevalence") {
  Rng rng(7);
  const auto set = random_set(rng, 10000, 0.1, 0);
  const double ap = average_precision(set);
  CHECK(ap > 0.08);
  CHECK(ap < 0.12);
}

TEST_CASE("average precision: single class rejected") {
  auto set = make_set({{0.5, 1}, {0.4, 1}});
  CHECK_THROWS_AS(average_precision(set), input_error);
}

TEST_CASE("average precision: invariant under strictly increasing transforms") {
  Rng rng(99);
  auto set = random_set(rng, 500, 0.3, 8);
  const double before = average_precision(set);
  for (auto& p : set) p.score = std::exp(3.0 * p.score) + 5.0;
  CHECK(average_precision(set) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("auroc: all scores equal gives one half") {
  const auto set = make_set({{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}});
  CHECK(auroc(set) == doctest::Approx(0.5));
}

TEST_CASE("auroc: perfect separation gives 1") {
  const auto set = make_set({{0.9, 1}, {0.8, 1}, {0.1, 0}});
  CHECK(auroc(set) == doctest::Approx(1.0));
}

TEST_CASE("auroc: matches brute-force pair counting exactly") {
  Rng rng(31337);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 50 + static_cast<int>(rng.bounded(951));
    const auto set = random_set(rng, n, 0.25, trial % 2 ? 5 : 0);
    CHECK(auroc(set) == doctest::Approx(oracle::brute_auroc(set)).epsilon(1e-15));
  }
}

TEST_CASE("ece: exact score-label agreement gives 0") {
  const auto set = make_set({{1.0, 1}, {0.0, 0}, {1.0, 1}, {0.0, 0}});
  CHECK(ece(set) == doctest::Approx(0.0));
}

TEST_CASE("ece: half scores at half prevalence gives 0") {
  const auto set = make_set({{0.5, 1}, {0.5, 0}});
  CHECK(ece(set) == doctest::Approx(0.0));
}

TEST_CASE("ece: confident wrong scores give the gap") {
  const auto set = make_set({{0.9, 0}, {0.9, 0}, {0.9, 0}});
  CHECK(ece(set) == doctest::Approx(0.9));
}

TEST_CASE("ece: score 1.0 lands in the last bin, 0.0 in the first") {
  const auto set = make_set({{1.0, 1}, {0.0, 0}});
  CHECK(ece(set, 15) == doctest::Approx(0.0));
}

TEST_CASE("brier: perfect probabilities give 0, constant half gives quarter") {
  CHECK(brier(make_set({{1.0, 1}, {0.0, 0}})) == doctest::Approx(0.0));
  CHECK(brier(make_set({{0.5, 1}, {0.5, 0}})) == doctest::Approx(0.25));
}

TEST_CASE("brier: matches direct mean square") {
  Rng rng(5);
  const auto set = random_set(rng, 777, 0.4, 0);
  double want = 0.0;
  for (const auto& p : set) want += (p.score - p.label) * (p.score - p.label);
  want /= static_cast<double>(set.size());
  CHECK(brier(set) == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("confusion: +infinity threshold never alerts") {
  const auto set = make_set({{0.9, 1}, {0.2, 0}});
  const auto op = confusion_at(set, std::numeric_limits<double>::infinity());
  CHECK(op.recall.value() == doctest::Approx(0.0));
  CHECK(op.fpr.value() == doctest::Approx(0.0));
  CHECK_FALSE(op.precision.has_value());
}

TEST_CASE("confusion: zero threshold alerts everything") {
  const auto set = make_set({{0.9, 1}, {0.2, 0}});
  const auto op = confusion_at(set, 0.0);
  CHECK(op.recall.value() == doctest::Approx(1.0));
  CHECK(op.fpr.value() == doctest::Approx(1.0));
}

TEST_CASE("confusion: hand-built six-prefix set at 0.5") {
  // scores/labels: (0.9,1) (0.7,0) (0.5,1) (0.4,1) (0.3,0) (0.1,0)
  const auto set =
      make_set({{0.9, 1}, {0.7, 0}, {0.5, 1}, {0.4, 1}, {0.3, 0}, {0.1, 0}});
  const auto op = confusion_at(set, 0.5);
  CHECK(op.tp == 2);
  CHECK(op.fp == 1);
  CHECK(op.fn == 1);
  CHECK(op.tn == 2);
  CHECK(op.accuracy.value() == doctest::Approx(4.0 / 6.0));
  CHECK(op.precision.value() == doctest::Approx(2.0 / 3.0));
  CHECK(op.recall.value() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("confusion: recall and fpr are non-increasing in the threshold") {
  Rng rng(4242);
  const auto set = random_set(rng, 400, 0.3, 10);
  double prev_recall = 1.1, prev_fpr = 1.1;
  for (double g = 0.0; g <= 1.0001; g += 0.05) {
    const auto op = confusion_at(set, g);
    CHECK(op.recall.value() <= prev_recall + 1e-12);
    CHECK(op.fpr.value() <= prev_fpr + 1e-12);
    prev_recall = op.recall.value();
    prev_fpr = op.fpr.value();
  }
}

TEST_CASE("first alert: three-trajectory hand case") {
  // One success that alerts, one failure alerting early, one silent failure.
  std::vector<TrajectoryScores> series;
  series.push_back({"success", 1, {0.1, 0.8, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1}});
  series.push_back({"fail_early", 0, {0.1, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1}});
  series.push_back({"fail_silent", 0, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1}});
  const auto rep = first_alert_diagnostics(series, 0.5, 3);
  CHECK(rep.far.value() == doctest::Approx(1.0));
  CHECK(rep.fail_alert_recall == doctest::Approx(0.5));
  CHECK(rep.early_fail_recall == doctest::Approx(0.5));
  CHECK(rep.alert_precision.value() == doctest::Approx(0.5));
  // lead: alerting failure (10-2)/10 = 0.8, silent failure 0 -> mean 0.4
  CHECK(rep.mean_lead_time == doctest::Approx(0.4));
}

TEST_CASE("first alert: boundary alert at T-H is inside the window") {
  std::vector<TrajectoryScores> series;
  std::vector<double> scores(10, 0.0);
  scores[6] = 1.0;  // first alert at t=7 = T-H for T=10, H=3
  series.push_back({"f", 0, scores});
  series.push_back({"s", 1, std::vector<double>(10, 0.0)});
  const auto rep = first_alert_diagnostics(series, 0.5, 3);
  CHECK(rep.fail_alert_recall == doctest::Approx(1.0));
  CHECK(rep.early_fail_recall == doctest::Approx(0.0));  // 7 is not < 7
  CHECK(rep.mean_lead_time == doctest::Approx(0.3));
}

TEST_CASE("first alert: no alerts at all") {
  std::vector<TrajectoryScores> series;
  series.push_back({"f", 0, {0.0, 0.0}});
  series.push_back({"s", 1, {0.0, 0.0}});
  const auto rep = first_alert_diagnostics(series, 0.5, 3);
  CHECK(rep.fail_alert_recall == doctest::Approx(0.0));
  CHECK(rep.mean_lead_time == doctest::Approx(0.0));
  CHECK_FALSE(rep.alert_precision.has_value());
}

TEST_CASE("abstained prefixes are excluded from ranking metrics") {
  auto set = make_set({{0.9, 1}, {0.8, 0}, {0.2, 1}, {0.1, 0}});
  set[1].abstain = true;  // drop the one inversion
  CHECK(abstained_count(set) == 1);
  CHECK(average_precision(set) > 0.8);
}

TEST_CASE("group_by_trajectory orders steps and keeps outcomes") {
  ScoredPrefixSet set;
  for (int t : {3, 1, 2}) {
    ScoredPrefix p;
    p.trajectory_id = "x";
    p.step = t;
    p.length = 3;
    p.outcome = 0;
    p.score = 0.25 * t;
    set.push_back(p);
  }
  const auto series = group_by_trajectory(set);
  REQUIRE(series.size() == 1);
  CHECK(series[0].scores == std::vector<double>{0.25, 0.5, 0.75});
  CHECK(series[0].outcome == 0);
}
