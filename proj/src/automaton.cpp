#include "prefixguard/automaton.hpp"

#include <algorithm>
#include <set>

#include "prefixguard/common.hpp"

namespace prefixguard {

int Dfa::step(int state, int symbol) const {
  if (symbol < 0 || symbol >= alphabet_size) return sink;
  return transitions[state][symbol];
}

bool Dfa::accepts(const std::vector<int>& symbols) const {
  int s = initial;
  for (int z : symbols) s = step(s, z);
  return accepting[s] != 0;
}

namespace {

// Partial automaton used during prefix-tree construction and merging.
// label: 0 unknown, +1 accepting, -1 rejecting.
struct Builder {
  std::vector<std::map<int, int>> next;
  std::vector<int> label;

  int add_state() {
    next.emplace_back();
    label.push_back(0);
    return static_cast<int>(next.size()) - 1;
  }
};

Builder build_prefix_tree(const std::vector<std::pair<std::vector<int>, bool>>& strings) {
  Builder b;
  b.add_state();  // root = 0
  for (const auto& [seq, positive] : strings) {
    int state = 0;
    for (int sym : seq) {
      auto it = b.next[state].find(sym);
      if (it == b.next[state].end()) {
        const int child = b.add_state();
        b.next[state][sym] = child;
        state = child;
      } else {
        state = it->second;
      }
    }
    const int want = positive ? 1 : -1;
    // Conflicts cannot happen here: the ambiguity filter removed them.
    b.label[state] = want;
  }
  return b;
}

// Folds `source` (root of a tree remnant) into `target`, propagating
// labels; returns false on an accept/reject conflict.
bool fold(Builder& b, int target, int source) {
  if (b.label[source] != 0) {
    if (b.label[target] == 0) b.label[target] = b.label[source];
    else if (b.label[target] != b.label[source]) return false;
  }
  for (const auto& [sym, child] : b.next[source]) {
    auto it = b.next[target].find(sym);
    if (it == b.next[target].end()) {
      b.next[target][sym] = child;
    } else {
      if (!fold(b, it->second, child)) return false;
    }
  }
  return true;
}

// Canonical state order: breadth-first from the root, edges taken in
// increasing symbol order. Equals (depth, lexicographic access string).
std::vector<int> bfs_order(const Builder& b) {
  std::vector<int> order;
  std::vector<char> seen(b.next.size(), 0);
  std::vector<int> queue = {0};
  seen[0] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const int s = queue[head];
    order.push_back(s);
    for (const auto& [sym, child] : b.next[s]) {
      if (!seen[child]) {
        seen[child] = 1;
        queue.push_back(child);
      }
    }
  }
  return order;
}

bool try_merge(const Builder& b, int red, int blue, Builder& merged) {
  merged = b;
  // Redirect every edge into `blue` (its unique red parent edge plus any
  // edges created by earlier folds) toward `red`.
  for (auto& next : merged.next) {
    for (auto& [sym, child] : next) {
      if (child == blue) child = red;
    }
  }
  return fold(merged, red, blue);
}

}  // namespace

FilteredSamples filter_ambiguous(const std::vector<SymbolTrajectory>& training,
                                 InductionSamples mode) {
  std::map<std::vector<int>, std::pair<bool, bool>> seen;  // pos, neg
  auto note = [&](const std::vector<int>& seq, bool positive) {
    auto& flags = seen[seq];
    (positive ? flags.first : flags.second) = true;
  };
  for (const auto& traj : training) {
    if (mode == InductionSamples::kFullTrajectories) {
      note(traj.symbols, traj.outcome == 0);
    } else {
      for (std::size_t t = 1; t <= traj.symbols.size(); ++t) {
        std::vector<int> prefix(traj.symbols.begin(), traj.symbols.begin() + t);
        note(prefix, traj.labels[t - 1] == 1);
      }
    }
  }
  FilteredSamples out;
  for (const auto& [seq, flags] : seen) {
    if (flags.first && flags.second) {
      ++out.conflicts_removed;
      continue;
    }
    out.strings.emplace_back(seq, flags.first);
  }
  return out;
}

Dfa induce_dfa(const std::vector<SymbolTrajectory>& training, int alphabet_size,
               InductionSamples mode) {
  if (alphabet_size < 1) throw input_error("induce_dfa: alphabet size >= 1");
  for (const auto& traj : training) {
    for (int z : traj.symbols) {
      if (z < 0 || z >= alphabet_size) {
        throw input_error("induce_dfa: symbol outside alphabet in trajectory " +
                          traj.trajectory_id);
      }
    }
  }
  FilteredSamples samples = filter_ambiguous(training, mode);
  if (samples.strings.empty()) {
    throw input_error("induce_dfa: no samples left after ambiguity filtering");
  }

  Builder b = build_prefix_tree(samples.strings);

  // Red-blue loop. Red states are committed; blue states are non-red
  // children of red states, processed in canonical order.
  std::set<int> red = {0};
  for (;;) {
    const std::vector<int> order = bfs_order(b);
    std::vector<int> rank(b.next.size(), -1);
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = static_cast<int>(i);

    int blue = -1;
    for (const int s : order) {
      if (red.count(s)) continue;
      bool child_of_red = false;
      for (const int r : red) {
        for (const auto& [sym, child] : b.next[r]) {
          if (child == s) child_of_red = true;
        }
      }
      if (child_of_red) {
        blue = s;
        break;
      }
    }
    if (blue < 0) break;

    std::vector<int> reds(red.begin(), red.end());
    std::sort(reds.begin(), reds.end(),
              [&](int a, int c) { return rank[a] < rank[c]; });
    bool merged_ok = false;
    for (const int r : reds) {
      Builder merged;
      if (try_merge(b, r, blue, merged)) {
        b = std::move(merged);
        merged_ok = true;
        break;
      }
    }
    if (!merged_ok) red.insert(blue);
  }

  // Compact to the reachable core in canonical order, then close the
  // transition function with an explicit sink.
  const std::vector<int> order = bfs_order(b);
  std::vector<int> new_id(b.next.size(), -1);
  for (std::size_t i = 0; i < order.size(); ++i) new_id[order[i]] = static_cast<int>(i);

  Dfa dfa;
  dfa.alphabet_size = alphabet_size;
  dfa.initial = 0;
  const int n = static_cast<int>(order.size());
  dfa.sink = n;
  dfa.transitions.assign(n + 1, std::vector<int>(alphabet_size, dfa.sink));
  dfa.accepting.assign(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    const int old = order[i];
    dfa.accepting[i] = b.label[old] == 1 ? 1 : 0;
    for (const auto& [sym, child] : b.next[old]) {
      dfa.transitions[i][sym] = new_id[child];
    }
  }
  dfa.risk.assign(n + 1, 0.0);
  dfa.calibration_count.assign(n + 1, 0);
  dfa.trusted.assign(n + 1, 0);

  // RPNI postcondition: the automaton classifies every retained string.
  for (const auto& [seq, positive] : samples.strings) {
    if (dfa.accepts(seq) != positive) {
      throw std::runtime_error("induce_dfa: merged automaton contradicts a sample");
    }
  }
  return dfa;
}

Dfa calibrate_state_risks(Dfa dfa, const std::vector<SymbolTrajectory>& calibration,
                          int min_count) {
  const int n = dfa.state_count();
  std::vector<std::int64_t> count(n, 0), positive(n, 0);
  std::int64_t total = 0, total_pos = 0;
  for (const auto& traj : calibration) {
    int state = dfa.initial;
    for (std::size_t t = 0; t < traj.symbols.size(); ++t) {
      state = dfa.step(state, traj.symbols[t]);
      const int label = traj.labels[t];
      ++count[state];
      positive[state] += label;
      ++total;
      total_pos += label;
    }
  }
  dfa.min_count = min_count;
  dfa.global_prevalence =
      total > 0 ? static_cast<double>(total_pos) / static_cast<double>(total) : 0.0;
  dfa.calibration_count.assign(count.begin(), count.end());
  dfa.risk.assign(n, 0.0);
  dfa.trusted.assign(n, 0);
  for (int s = 0; s < n; ++s) {
    if (count[s] == 0) {
      dfa.risk[s] = dfa.global_prevalence;
      dfa.trusted[s] = 0;
    } else {
      dfa.risk[s] = static_cast<double>(positive[s]) / static_cast<double>(count[s]);
      dfa.trusted[s] = count[s] >= min_count ? 1 : 0;
    }
  }
  return dfa;
}

DfaRiskSeries dfa_score_prefix(const Dfa& dfa, const SymbolTrajectory& trajectory,
                               AbstainFallback fallback) {
  DfaRiskSeries rs;
  rs.trajectory_id = trajectory.trajectory_id;
  const double fb =
      fallback == AbstainFallback::kGlobalPrevalence ? dfa.global_prevalence : 0.0;
  int state = dfa.initial;
  for (int z : trajectory.symbols) {
    state = dfa.step(state, z);
    if (dfa.trusted[state]) {
      rs.scores.push_back(dfa.risk[state]);
      rs.abstain.push_back(false);
    } else {
      rs.scores.push_back(fb);
      rs.abstain.push_back(true);
    }
  }
  return rs;
}

DfaAuditReport audit_dfa(const Dfa& dfa, const std::vector<SymbolTrajectory>& test,
                         double warning_threshold) {
  DfaAuditReport rep;
  rep.state_count = dfa.state_count();
  std::vector<std::int64_t> routed(dfa.state_count(), 0);
  std::int64_t total = 0, trusted_hits = 0;
  for (const auto& traj : test) {
    int state = dfa.initial;
    for (int z : traj.symbols) {
      state = dfa.step(state, z);
      ++routed[state];
      ++total;
      trusted_hits += dfa.trusted[state] ? 1 : 0;
    }
  }
  for (int s = 0; s < dfa.state_count(); ++s) {
    if (dfa.trusted[s]) {
      ++rep.trusted_state_count;
      rep.max_trusted_risk = std::max(rep.max_trusted_risk, dfa.risk[s]);
      if (dfa.risk[s] >= warning_threshold) ++rep.warning_state_count;
    }
  }
  if (total > 0) {
    rep.trusted_prefix_share =
        static_cast<double>(trusted_hits) / static_cast<double>(total);
    std::vector<std::int64_t> sorted = routed;
    std::sort(sorted.rbegin(), sorted.rend());
    std::int64_t top5 = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, sorted.size()); ++i) {
      top5 += sorted[i];
    }
    rep.top5_share = static_cast<double>(top5) / static_cast<double>(total);
  }
  rep.abstention_rate = 1.0 - rep.trusted_prefix_share;
  return rep;
}

nlohmann::json Dfa::to_json() const {
  return nlohmann::json{{"alphabet_size", alphabet_size},
                        {"initial", initial},
                        {"sink", sink},
                        {"transitions", transitions},
                        {"accepting", accepting},
                        {"risk", risk},
                        {"calibration_count", calibration_count},
                        {"trusted", trusted},
                        {"min_count", min_count},
                        {"global_prevalence", global_prevalence},
                        {"source_model_hash", source_model_hash}};
}

Dfa Dfa::from_json(const nlohmann::json& j) {
  Dfa d;
  d.alphabet_size = j.at("alphabet_size").get<int>();
  d.initial = j.at("initial").get<int>();
  d.sink = j.at("sink").get<int>();
  d.transitions = j.at("transitions").get<std::vector<std::vector<int>>>();
  d.accepting = j.at("accepting").get<std::vector<char>>();
  d.risk = j.at("risk").get<std::vector<double>>();
  d.calibration_count = j.at("calibration_count").get<std::vector<std::int64_t>>();
  d.trusted = j.at("trusted").get<std::vector<char>>();
  d.min_count = j.value("min_count", 10);
  d.global_prevalence = j.value("global_prevalence", 0.0);
  d.source_model_hash = j.value("source_model_hash", "");
  for (const auto& row : d.transitions) {
    for (int s : row) {
      if (s < 0 || s >= d.state_count()) {
        throw input_error("dfa artifact: transition target out of range");
      }
    }
  }
  return d;
}

nlohmann::json DfaAuditReport::to_json() const {
  return nlohmann::json{{"state_count", state_count},
                        {"trusted_state_count", trusted_state_count},
                        {"trusted_prefix_share", trusted_prefix_share},
                        {"warning_state_count", warning_state_count},
                        {"top5_share", top5_share},
                        {"max_trusted_risk", max_trusted_risk},
                        {"abstention_rate", abstention_rate}};
}

RoutedDfa induce_routed_dfa(
    const std::vector<std::pair<std::string, SymbolTrajectory>>& train_by_route,
    const std::vector<std::pair<std::string, SymbolTrajectory>>& cal_by_route,
    int alphabet_size, int min_count, InductionSamples mode) {
  RoutedDfa routed;
  routed.min_count = min_count;
  std::map<std::string, std::vector<SymbolTrajectory>> train_groups, cal_groups;
  for (const auto& [route, traj] : train_by_route) train_groups[route].push_back(traj);
  for (const auto& [route, traj] : cal_by_route) cal_groups[route].push_back(traj);

  std::int64_t total = 0, total_pos = 0;
  for (const auto& [route, trajs] : cal_groups) {
    std::int64_t n = 0, pos = 0;
    for (const auto& t : trajs) {
      for (int l : t.labels) {
        ++n;
        pos += l;
      }
    }
    routed.route_prior[route] = n > 0 ? static_cast<double>(pos) / n : 0.0;
    total += n;
    total_pos += pos;
  }
  routed.global_prior =
      total > 0 ? static_cast<double>(total_pos) / static_cast<double>(total) : 0.0;

  for (const auto& [route, trajs] : train_groups) {
    Dfa dfa = induce_dfa(trajs, alphabet_size, mode);
    const auto cal_it = cal_groups.find(route);
    const std::vector<SymbolTrajectory> empty;
    dfa = calibrate_state_risks(dfa, cal_it != cal_groups.end() ? cal_it->second : empty,
                                min_count);
    routed.routes.emplace(route, std::move(dfa));
  }
  return routed;
}

DfaRiskSeries routed_dfa_score(const RoutedDfa& routed, const std::string& route,
                               const SymbolTrajectory& trajectory) {
  const auto it = routed.routes.find(route);
  if (it == routed.routes.end()) {
    DfaRiskSeries rs;
    rs.trajectory_id = trajectory.trajectory_id;
    rs.scores.assign(trajectory.symbols.size(), routed.global_prior);
    rs.abstain.assign(trajectory.symbols.size(), true);
    return rs;
  }
  return dfa_score_prefix(it->second, trajectory);
}

DfaRiskSeries route_prior_score(const RoutedDfa& routed, const std::string& route,
                                const SymbolTrajectory& trajectory) {
  DfaRiskSeries rs;
  rs.trajectory_id = trajectory.trajectory_id;
  const auto it = routed.route_prior.find(route);
  const bool known = it != routed.route_prior.end();
  rs.scores.assign(trajectory.symbols.size(),
                   known ? it->second : routed.global_prior);
  rs.abstain.assign(trajectory.symbols.size(), !known);
  return rs;
}

nlohmann::json RoutedDfa::to_json() const {
  nlohmann::json routes_json = nlohmann::json::object();
  for (const auto& [route, dfa] : routes) routes_json[route] = dfa.to_json();
  return nlohmann::json{{"route_key", route_key},
                        {"routes", routes_json},
                        {"route_prior", route_prior},
                        {"global_prior", global_prior},
                        {"min_count", min_count}};
}

RoutedDfa RoutedDfa::from_json(const nlohmann::json& j) {
  RoutedDfa r;
  r.route_key = j.value("route_key", "");
  for (const auto& [route, dfa] : j.at("routes").items()) {
    r.routes.emplace(route, Dfa::from_json(dfa));
  }
  r.route_prior = j.at("route_prior").get<std::map<std::string, double>>();
  r.global_prior = j.value("global_prior", 0.0);
  r.min_count = j.value("min_count", 10);
  return r;
}

}  // namespace prefixguard
