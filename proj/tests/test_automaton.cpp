#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "oracles.hpp"
#include "prefixguard/automaton.hpp"
#include "prefixguard/common.hpp"

using namespace prefixguard;

namespace {

SymbolTrajectory seq(const std::string& id, int outcome, std::vector<int> symbols,
                     int horizon = 3) {
  SymbolTrajectory t;
  t.trajectory_id = id;
  t.outcome = outcome;
  t.symbols = std::move(symbols);
  const int T = static_cast<int>(t.symbols.size());
  t.labels.resize(T);
  for (int i = 1; i <= T; ++i) {
    t.labels[i - 1] = (outcome == 0 && i >= T - horizon) ? 1 : 0;
  }
  return t;
}

// Ground truth for the planted language: fail iff the sequence contains
// the adjacent pair 1,1 (a 3-state minimal DFA).
bool contains_11(const std::vector<int>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i - 1] == 1 && s[i] == 1) return true;
  }
  return false;
}

std::vector<SymbolTrajectory> planted_corpus(int max_len, int alphabet) {
  // all strings up to max_len, labeled by the planted language
  std::vector<SymbolTrajectory> out;
  std::vector<std::vector<int>> frontier = {{}};
  int id = 0;
  for (int len = 0; len < max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier) {
      for (int a = 0; a < alphabet; ++a) {
        auto t = s;
        t.push_back(a);
        out.push_back(seq("p" + std::to_string(id++), contains_11(t) ? 0 : 1, t));
        next.push_back(std::move(t));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST_CASE("rpni: textbook sample recovers the smallest consistent machine") {
  // positives {ab}; negatives {a, b, empty} over alphabet {a=0, b=1}
  std::vector<SymbolTrajectory> sample;
  sample.push_back(seq("p", 0, {0, 1}));
  sample.push_back(seq("n1", 1, {0}));
  sample.push_back(seq("n2", 1, {1}));
  sample.push_back(seq("n3", 1, {}));  // the empty string as a labeled sample
  const Dfa dfa = induce_dfa(sample, 2);
  CHECK(dfa.accepts({0, 1}));
  CHECK_FALSE(dfa.accepts({0}));
  CHECK_FALSE(dfa.accepts({1}));
  CHECK_FALSE(dfa.accepts({}));

  std::vector<std::pair<std::vector<int>, bool>> labeled = {
      {{0, 1}, true}, {{0}, false}, {{1}, false}, {{}, false}};
  const auto smallest = oracle::smallest_consistent_dfa(labeled, 2, 4);
  REQUIRE(smallest.states > 0);
  // count live (reachable) states of the induced machine, excluding the sink
  std::set<int> live;
  std::vector<int> stack = {dfa.initial};
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    if (s == dfa.sink || !live.insert(s).second) continue;
    for (int a = 0; a < dfa.alphabet_size; ++a) stack.push_back(dfa.step(s, a));
  }
  CHECK(static_cast<int>(live.size()) == smallest.states);
}

TEST_CASE("ambiguity filter removes exactly the conflicting duplicates") {
  std::vector<SymbolTrajectory> sample;
  sample.push_back(seq("a", 0, {0, 1, 0}));
  sample.push_back(seq("b", 1, {0, 1, 0}));  // same string, both outcomes
  sample.push_back(seq("c", 0, {1, 1}));
  const auto filtered = filter_ambiguous(sample, InductionSamples::kFullTrajectories);
  CHECK(filtered.conflicts_removed == 1);
  REQUIRE(filtered.strings.size() == 1);
  CHECK(filtered.strings[0].first == std::vector<int>{1, 1});

  // nothing left after filtering -> error
  std::vector<SymbolTrajectory> only_conflict = {seq("a", 0, {0}), seq("b", 1, {0})};
  CHECK_THROWS_AS(induce_dfa(only_conflict, 2), input_error);
}

TEST_CASE("rpni: induced machine classifies every retained sample") {
  Rng rng(99);
  std::vector<SymbolTrajectory> sample;
  for (int i = 0; i < 200; ++i) {
    std::vector<int> s;
    const int len = 1 + static_cast<int>(rng.bounded(6));
    for (int j = 0; j < len; ++j) s.push_back(static_cast<int>(rng.bounded(2)));
    sample.push_back(seq("r" + std::to_string(i), contains_11(s) ? 0 : 1, s));
  }
  const Dfa dfa = induce_dfa(sample, 2);
  const auto filtered = filter_ambiguous(sample, InductionSamples::kFullTrajectories);
  for (const auto& [s, positive] : filtered.strings) {
    CHECK(dfa.accepts(s) == positive);
  }
}

TEST_CASE("rpni: planted 3-state language is recovered exactly") {
  const auto corpus = planted_corpus(7, 2);
  const Dfa dfa = induce_dfa(corpus, 2);
  const bool same = oracle::equivalent_up_to(
      [&](const std::vector<int>& s) { return dfa.accepts(s); },
      [&](const std::vector<int>& s) { return contains_11(s); }, 2, 8);
  CHECK(same);
}

TEST_CASE("rpni: deterministic under input permutations") {
  auto corpus = planted_corpus(6, 2);
  const Dfa a = induce_dfa(corpus, 2);
  std::reverse(corpus.begin(), corpus.end());
  const Dfa b = induce_dfa(corpus, 2);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("calibration: counts, risks, trust flags, and the routing partition") {
  const auto corpus = planted_corpus(6, 2);
  Dfa dfa = induce_dfa(corpus, 2);
  std::vector<SymbolTrajectory> cal;
  Rng rng(5);
  for (int i = 0; i < 120; ++i) {
    std::vector<int> s;
    const int len = 2 + static_cast<int>(rng.bounded(5));
    for (int j = 0; j < len; ++j) s.push_back(static_cast<int>(rng.bounded(2)));
    cal.push_back(seq("c" + std::to_string(i), contains_11(s) ? 0 : 1, s));
  }
  dfa = calibrate_state_risks(dfa, cal, 10);

  std::int64_t routed_total = 0, prefix_total = 0;
  for (const auto& t : cal) prefix_total += static_cast<std::int64_t>(t.symbols.size());
  for (int s = 0; s < dfa.state_count(); ++s) {
    routed_total += dfa.calibration_count[s];
    if (dfa.calibration_count[s] >= 10) CHECK(dfa.trusted[s]);
    if (dfa.calibration_count[s] < 10) CHECK_FALSE(dfa.trusted[s]);
    CHECK(dfa.risk[s] >= 0.0);
    CHECK(dfa.risk[s] <= 1.0);
  }
  CHECK(routed_total == prefix_total);
}

TEST_CASE("calibration: explicit count and risk example") {
  // one state machine: everything routes to the initial state
  std::vector<SymbolTrajectory> train = {seq("a", 0, {0}), seq("b", 1, {1})};
  Dfa dfa = induce_dfa(train, 2);
  std::vector<SymbolTrajectory> cal;
  // 10 prefixes, 3 positive: route one-step sequences
  for (int i = 0; i < 10; ++i) {
    SymbolTrajectory t;
    t.trajectory_id = "c" + std::to_string(i);
    t.outcome = i < 3 ? 0 : 1;
    t.symbols = {i % 2};
    t.labels = {i < 3 ? 1 : 0};
    cal.push_back(t);
  }
  Dfa calibrated = calibrate_state_risks(dfa, cal, 10);
  // states reached by one step from the root
  const int s0 = calibrated.step(calibrated.initial, 0);
  const int s1 = calibrated.step(calibrated.initial, 1);
  std::int64_t total = calibrated.calibration_count[s0];
  if (s1 != s0) total += calibrated.calibration_count[s1];
  CHECK(total == 10);
  // nine routed prefixes keep a state untrusted regardless of mix
  Dfa strict = calibrate_state_risks(dfa, {cal.begin(), cal.begin() + 9}, 10);
  const int s0b = strict.step(strict.initial, 0);
  CHECK_FALSE(strict.trusted[s0b]);
}

TEST_CASE("scoring: trusted states emit risks, untrusted abstain with fallback") {
  std::vector<SymbolTrajectory> train = {seq("a", 0, {1, 1, 1, 1}),
                                         seq("b", 1, {0, 0, 0, 0})};
  Dfa dfa = induce_dfa(train, 2);
  std::vector<SymbolTrajectory> cal;
  for (int i = 0; i < 30; ++i) {
    cal.push_back(seq("c" + std::to_string(i), i % 3 == 0 ? 0 : 1,
                      {i % 2, i % 2, i % 2, i % 2}));
  }
  dfa = calibrate_state_risks(dfa, cal, 10);

  SymbolTrajectory probe = seq("p", 1, {0, 0, 0, 0});
  const auto rs = dfa_score_prefix(dfa, probe);
  REQUIRE(rs.scores.size() == 4);
  for (std::size_t i = 0; i < rs.scores.size(); ++i) {
    if (!rs.abstain[i]) {
      CHECK(rs.scores[i] >= 0.0);
      CHECK(rs.scores[i] <= 1.0);
    } else {
      CHECK(rs.scores[i] == doctest::Approx(dfa.global_prevalence));
    }
  }

  // out-of-alphabet symbols route to the sink and abstain
  SymbolTrajectory weird = seq("w", 1, {0});
  weird.symbols = {7};
  const auto rs2 = dfa_score_prefix(dfa, weird);
  CHECK(rs2.abstain[0]);

  // zero fallback policy
  const auto rs3 = dfa_score_prefix(dfa, weird, AbstainFallback::kZero);
  CHECK(rs3.scores[0] == 0.0);
}

TEST_CASE("audit: single-state machine concentrates everything") {
  std::vector<SymbolTrajectory> train = {seq("a", 0, {0}), seq("b", 0, {1})};
  Dfa dfa = induce_dfa(train, 2);
  std::vector<SymbolTrajectory> cal;
  for (int i = 0; i < 40; ++i) {
    cal.push_back(seq("c" + std::to_string(i), 0, {i % 2}));
  }
  dfa = calibrate_state_risks(dfa, cal, 10);
  std::vector<SymbolTrajectory> test;
  for (int i = 0; i < 20; ++i) {
    test.push_back(seq("t" + std::to_string(i), 0, {i % 2}));
  }
  const auto rep = audit_dfa(dfa, test, 0.5);
  CHECK(rep.top5_share == doctest::Approx(1.0));
  CHECK(rep.trusted_prefix_share + rep.abstention_rate == doctest::Approx(1.0));
}

TEST_CASE("audit: shares lie in the unit interval and complement exactly") {
  const auto corpus = planted_corpus(6, 2);
  Dfa dfa = induce_dfa(corpus, 2);
  dfa = calibrate_state_risks(dfa, corpus, 10);
  const auto rep = audit_dfa(dfa, corpus, 0.5);
  CHECK(rep.trusted_prefix_share >= 0.0);
  CHECK(rep.trusted_prefix_share <= 1.0);
  CHECK(rep.top5_share >= 0.0);
  CHECK(rep.top5_share <= 1.0);
  CHECK(rep.trusted_prefix_share + rep.abstention_rate == doctest::Approx(1.0));
  CHECK(rep.state_count == dfa.state_count());
}

TEST_CASE("abstention stays low with enough calibration mass") {
  Rng rng(11);
  auto draw = [&](int i, const char* prefix) {
    std::vector<int> s;
    const int len = 3 + static_cast<int>(rng.bounded(5));
    for (int j = 0; j < len; ++j) s.push_back(static_cast<int>(rng.bounded(2)));
    return seq(prefix + std::to_string(i), contains_11(s) ? 0 : 1, s);
  };
  std::vector<SymbolTrajectory> train, cal, test;
  for (int i = 0; i < 300; ++i) train.push_back(draw(i, "tr"));
  for (int i = 0; i < 150; ++i) cal.push_back(draw(i, "ca"));
  for (int i = 0; i < 150; ++i) test.push_back(draw(i, "te"));
  std::int64_t cal_prefixes = 0;
  for (const auto& t : cal) cal_prefixes += static_cast<std::int64_t>(t.symbols.size());
  REQUIRE(cal_prefixes >= 500);
  Dfa dfa = induce_dfa(train, 2);
  dfa = calibrate_state_risks(dfa, cal, 10);
  const auto rep = audit_dfa(dfa, test, 0.5);
  CHECK(rep.abstention_rate <= 0.02);
}

TEST_CASE("state counts stay stable across corpus seeds") {
  std::vector<int> counts;
  for (const std::uint64_t corpus_seed : {101u, 202u, 303u}) {
    Rng rng(corpus_seed);
    std::vector<SymbolTrajectory> train;
    for (int i = 0; i < 250; ++i) {
      std::vector<int> s;
      const int len = 3 + static_cast<int>(rng.bounded(5));
      for (int j = 0; j < len; ++j) s.push_back(static_cast<int>(rng.bounded(2)));
      train.push_back(seq("t" + std::to_string(i), contains_11(s) ? 0 : 1, s));
    }
    counts.push_back(induce_dfa(train, 2).state_count());
  }
  const double mean = (counts[0] + counts[1] + counts[2]) / 3.0;
  for (int c : counts) {
    CHECK(std::abs(c - mean) <= 0.2 * mean + 1e-9);
  }
}

TEST_CASE("prefix-mode induction consumes labeled prefixes") {
  std::vector<SymbolTrajectory> train = {seq("a", 0, {0, 0, 1}, 1),
                                         seq("b", 1, {0, 0, 0}, 1)};
  const auto filtered = filter_ambiguous(train, InductionSamples::kPrefixes);
  // prefixes with H=1: a gives {0}(0) {00}(1) {001}(1); b gives {0}(0)
  // {00}(0) {000}(0); the shared string {00} carries both labels
  CHECK(filtered.conflicts_removed == 1);
  CHECK(filtered.strings.size() == 3);
  const Dfa dfa = induce_dfa(train, 2, InductionSamples::kPrefixes);
  CHECK(dfa.accepts({0, 0, 1}));
  CHECK_FALSE(dfa.accepts({0, 0, 0}));
}

TEST_CASE("dfa json round trip") {
  const auto corpus = planted_corpus(5, 2);
  Dfa dfa = induce_dfa(corpus, 2);
  dfa = calibrate_state_risks(dfa, corpus, 10);
  dfa.source_model_hash = "abc123";
  const Dfa back = Dfa::from_json(dfa.to_json());
  CHECK(back.to_json() == dfa.to_json());
}

TEST_CASE("routed dfa: single route matches the global machine") {
  const auto corpus = planted_corpus(5, 2);
  std::vector<std::pair<std::string, SymbolTrajectory>> routed_train, routed_cal;
  for (const auto& t : corpus) {
    routed_train.emplace_back("only", t);
    routed_cal.emplace_back("only", t);
  }
  const RoutedDfa routed = induce_routed_dfa(routed_train, routed_cal, 2, 10);
  Dfa global = induce_dfa(corpus, 2);
  global = calibrate_state_risks(global, corpus, 10);
  REQUIRE(routed.routes.size() == 1);
  for (const auto& t : corpus) {
    const auto a = routed_dfa_score(routed, "only", t);
    const auto b = dfa_score_prefix(global, t);
    CHECK(a.scores == b.scores);
  }
}

TEST_CASE("routed dfa: route-perfect outcomes give a perfect prior baseline") {
  std::vector<std::pair<std::string, SymbolTrajectory>> train, cal;
  std::vector<SymbolTrajectory> eval;
  std::vector<std::string> eval_routes;
  Rng rng(7);
  for (int i = 0; i < 60; ++i) {
    const bool failing_route = i % 2 == 0;
    std::vector<int> s;
    for (int j = 0; j < 4; ++j) s.push_back(static_cast<int>(rng.bounded(2)));
    auto t = seq("r" + std::to_string(i), failing_route ? 0 : 1, s);
    const std::string route = failing_route ? "bad" : "good";
    train.emplace_back(route, t);
    cal.emplace_back(route, t);
    eval.push_back(t);
    eval_routes.push_back(route);
  }
  const RoutedDfa routed = induce_routed_dfa(train, cal, 2, 5);
  ScoredPrefixSet set;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto rs = route_prior_score(routed, eval_routes[i], eval[i]);
    for (std::size_t t = 0; t < rs.scores.size(); ++t) {
      ScoredPrefix p;
      p.trajectory_id = eval[i].trajectory_id;
      p.step = static_cast<int>(t) + 1;
      p.length = static_cast<int>(rs.scores.size());
      p.outcome = eval[i].outcome;
      p.label = eval[i].labels[t];
      p.score = rs.scores[t];
      set.push_back(p);
    }
  }
  CHECK(average_precision(set) == doctest::Approx(1.0));

  // unseen route falls back to the global prior and abstains
  const auto rs = routed_dfa_score(routed, "unseen", eval.front());
  CHECK(rs.abstain[0]);
  CHECK(rs.scores[0] == doctest::Approx(routed.global_prior));

  // bookkeeping: total state count equals the per-route sum
  int total = 0;
  for (const auto& [route, dfa] : routed.routes) total += dfa.state_count();
  CHECK(total >= 2);
}

TEST_CASE("single-class routes still yield defined priors") {
  std::vector<std::pair<std::string, SymbolTrajectory>> train, cal;
  train.emplace_back("allfail", seq("a", 0, {0, 1}));
  cal.emplace_back("allfail", seq("b", 0, {1, 0}));
  const RoutedDfa routed = induce_routed_dfa(train, cal, 2, 1);
  CHECK(routed.route_prior.at("allfail") >= 0.0);
  CHECK(routed.route_prior.at("allfail") <= 1.0);
}
