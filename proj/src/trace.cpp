#include "prefixguard/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prefixguard/artifact.hpp"
#include "prefixguard/common.hpp"

namespace prefixguard {

PrefixLabelSet label_prefixes(const RawTrajectory& trajectory, int horizon) {
  if (trajectory.steps.empty()) throw input_error("label_prefixes: empty trajectory");
  if (horizon < 1) throw input_error("label_prefixes: horizon must be >= 1");
  const int T = trajectory.length();
  PrefixLabelSet out;
  out.trajectory_id = trajectory.trajectory_id;
  out.horizon = horizon;
  out.labels.resize(T);
  for (int t = 1; t <= T; ++t) {
    out.labels[t - 1] = (trajectory.outcome == 0 && t >= T - horizon) ? 1 : 0;
  }
  return out;
}

double positive_prefix_rate(const std::vector<PrefixLabelSet>& labelsets) {
  std::int64_t pos = 0, total = 0;
  for (const auto& ls : labelsets) {
    pos += ls.positives();
    total += static_cast<std::int64_t>(ls.labels.size());
  }
  if (total == 0) throw input_error("positive_prefix_rate: no prefixes");
  return static_cast<double>(pos) / static_cast<double>(total);
}

nlohmann::json SplitSpec::to_json() const {
  return nlohmann::json{{"train_ids", train_ids},
                        {"calibration_ids", calibration_ids},
                        {"validation_ids", validation_ids},
                        {"test_ids", test_ids},
                        {"seed", seed}};
}

SplitSpec SplitSpec::from_json(const nlohmann::json& j) {
  SplitSpec s;
  s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  s.calibration_ids = j.at("calibration_ids").get<std::vector<std::string>>();
  s.validation_ids = j.at("validation_ids").get<std::vector<std::string>>();
  s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  s.seed = j.value("seed", std::uint64_t(0));
  return s;
}

bool SplitSpec::contains_train(const std::string& id) const {
  return std::find(train_ids.begin(), train_ids.end(), id) != train_ids.end() ||
         std::find(calibration_ids.begin(), calibration_ids.end(), id) !=
             calibration_ids.end();
}

namespace {

// Integer allocation of n slots across ratios by largest remainder.
std::vector<int> allocate(int n, const std::vector<double>& ratios) {
  std::vector<int> base(ratios.size());
  std::vector<std::pair<double, std::size_t>> frac;
  int assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double q = n * ratios[i];
    base[i] = static_cast<int>(std::floor(q));
    assigned += base[i];
    frac.push_back({q - base[i], i});
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });
  for (int k = 0; k < n - assigned; ++k) base[frac[k].second] += 1;
  return base;
}

}  // namespace

SplitSpec make_splits(const Corpus& corpus, double train_ratio, double val_ratio,
                      double test_ratio, double calibration_fraction,
                      std::uint64_t seed) {
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
    throw input_error("make_splits: ratios must sum to 1");
  }
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw input_error("make_splits: calibration fraction must lie in (0,1)");
  }
  if (corpus.size() < 10) {
    throw input_error("make_splits: corpus too small to populate all splits");
  }

  // Stratify by outcome so small corpora keep both classes in every split.
  std::vector<std::vector<std::string>> by_class(2);
  for (const auto& t : corpus) by_class[t.outcome == 0 ? 0 : 1].push_back(t.trajectory_id);

  SplitSpec spec;
  spec.seed = seed;
  for (std::size_t c = 0; c < 2; ++c) {
    auto& ids = by_class[c];
    Rng rng(derive_seed(seed, c));
    rng.shuffle(ids);
    const auto counts = allocate(static_cast<int>(ids.size()),
                                 {train_ratio, val_ratio, test_ratio});
    int pos = 0;
    std::vector<std::string> train_pool(ids.begin() + pos, ids.begin() + pos + counts[0]);
    pos += counts[0];
    spec.validation_ids.insert(spec.validation_ids.end(), ids.begin() + pos,
                               ids.begin() + pos + counts[1]);
    pos += counts[1];
    spec.test_ids.insert(spec.test_ids.end(), ids.begin() + pos,
                         ids.begin() + pos + counts[2]);

    // Calibration carved from the head of each class's training pool.
    const int cal_c = static_cast<int>(
        std::llround(calibration_fraction * static_cast<double>(train_pool.size())));
    spec.calibration_ids.insert(spec.calibration_ids.end(), train_pool.begin(),
                                train_pool.begin() + cal_c);
    spec.train_ids.insert(spec.train_ids.end(), train_pool.begin() + cal_c,
                          train_pool.end());
  }
  return spec;
}

void SynthConfig::validate() const {
  if (trajectory_count < 1) throw input_error("synth: trajectory_count >= 1");
  if (min_length < 1 || max_length < min_length) {
    throw input_error("synth: need 1 <= min_length <= max_length");
  }
  if (!(failure_rate > 0.0 && failure_rate < 1.0)) {
    throw input_error("synth: failure_rate must lie in (0,1)");
  }
  if (injection_window > min_length) {
    throw input_error("synth: injection window must not exceed min length");
  }
  if (injection_window < 1) throw input_error("synth: injection window >= 1");
  if (precursor_probability < 0.0 || precursor_probability > 1.0) {
    throw input_error("synth: precursor probability in [0,1]");
  }
  if (!(length_hazard > 0.0 && length_hazard <= 1.0)) {
    throw input_error("synth: length hazard must lie in (0,1]");
  }
  if (precursor_vocabulary.empty() || noise_vocabulary.empty()) {
    throw input_error("synth: vocabularies must be nonempty");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return nlohmann::json{{"trajectory_count", trajectory_count},
                        {"min_length", min_length},
                        {"max_length", max_length},
                        {"failure_rate", failure_rate},
                        {"precursor_vocabulary", precursor_vocabulary},
                        {"injection_window", injection_window},
                        {"precursor_probability", precursor_probability},
                        {"noise_vocabulary", noise_vocabulary},
                        {"length_hazard", length_hazard},
                        {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.trajectory_count = j.value("trajectory_count", c.trajectory_count);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  c.failure_rate = j.value("failure_rate", c.failure_rate);
  if (j.contains("precursor_vocabulary")) {
    c.precursor_vocabulary = j["precursor_vocabulary"].get<std::vector<std::string>>();
  }
  c.injection_window = j.value("injection_window", c.injection_window);
  c.precursor_probability = j.value("precursor_probability", c.precursor_probability);
  if (j.contains("noise_vocabulary")) {
    c.noise_vocabulary = j["noise_vocabulary"].get<std::vector<std::string>>();
  }
  c.length_hazard = j.value("length_hazard", c.length_hazard);
  c.seed = j.value("seed", c.seed);
  return c;
}

Corpus generate_synthetic_corpus(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Corpus corpus;
  corpus.reserve(config.trajectory_count);


  for (int i = 0; i < config.trajectory_count; ++i) {
    RawTrajectory traj;
    traj.trajectory_id = "synth." + std::to_string(i);
    traj.task_id = "task." + std::to_string(i % 16);
    traj.outcome = rng.bernoulli(config.failure_rate) ? 0 : 1;

    int length = config.min_length;
    while (length < config.max_length && !rng.bernoulli(config.length_hazard)) {
      ++length;
    }

    const bool planted =
        traj.outcome == 0 && rng.bernoulli(config.precursor_probability);

    for (int t = 1; t <= length; ++t) {
      const bool in_window = t > length - config.injection_window;
      const bool precursor_step = planted && in_window;
      const auto& noise = config.noise_vocabulary;
      const std::string verb = noise[rng.bounded(noise.size())];
      const std::string obs_tok = noise[rng.bounded(noise.size())];
      const int target = static_cast<int>(rng.bounded(40));

      nlohmann::json step;
      step["tool"] = verb;
      step["action"] = verb + " target_" + std::to_string(target);
      step["args"] = "{\"target\": \"node_" + std::to_string(target) + "\"}";
      step["observation"] = "panel shows " + obs_tok + " entry_" +
                            std::to_string(rng.bounded(40));
      step["meta"] = "bench=synthetic";
      if (precursor_step) {
        const auto& pv = config.precursor_vocabulary;
        const std::string tok = pv[rng.bounded(pv.size())];
        step["status"] = "error";
        step["result"] = tok + " raised while handling target_" +
                         std::to_string(target);
      } else {
        step["status"] = "ok";
        step["result"] = "completed " + verb + " rows_" +
                         std::to_string(rng.bounded(9));
      }
      traj.steps.push_back(std::move(step));
    }
    corpus.push_back(std::move(traj));
  }
  return corpus;
}

RawTrajectory scramble_prefix(const RawTrajectory& trajectory, int t,
                              std::uint64_t seed) {
  if (t < 1 || t > trajectory.length()) {
    throw input_error("scramble_prefix: step index out of range");
  }
  RawTrajectory out;
  out.trajectory_id = trajectory.trajectory_id;
  out.task_id = trajectory.task_id;
  out.outcome = trajectory.outcome;
  std::vector<int> order(t);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  out.steps.reserve(t);
  for (int i : order) out.steps.push_back(trajectory.steps[i]);
  return out;
}

nlohmann::json trajectory_to_json(const RawTrajectory& t) {
  return nlohmann::json{{"trajectory_id", t.trajectory_id},
                        {"task_id", t.task_id},
                        {"outcome", t.outcome},
                        {"steps", t.steps}};
}

RawTrajectory trajectory_from_json(const nlohmann::json& j) {
  RawTrajectory t;
  t.trajectory_id = j.at("trajectory_id").get<std::string>();
  t.task_id = j.value("task_id", "");
  t.outcome = j.at("outcome").get<int>();
  if (t.outcome != 0 && t.outcome != 1) {
    throw input_error("trajectory " + t.trajectory_id + ": outcome must be 0 or 1");
  }
  for (const auto& s : j.at("steps")) t.steps.push_back(s);
  if (t.steps.empty()) {
    throw input_error("trajectory " + t.trajectory_id + ": steps must be nonempty");
  }
  return t;
}

Corpus read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open corpus: " + path);
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      corpus.push_back(trajectory_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw input_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (corpus.empty()) throw input_error("corpus is empty: " + path);
  return corpus;
}

void write_corpus_jsonl(const std::string& path, const Corpus& corpus) {
  std::ostringstream out;
  for (const auto& t : corpus) out << trajectory_to_json(t).dump() << "\n";
  write_file(path, out.str());
}

}  // namespace prefixguard
