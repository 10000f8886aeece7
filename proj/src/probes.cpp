#include "prefixguard/probes.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "prefixguard/autodiff.hpp"
#include "prefixguard/common.hpp"
#include "prefixguard/observability.hpp"

namespace prefixguard {

namespace {

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 + exp(x)) without overflow
double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct LogisticProblem {
  const std::vector<SparseVec>& x;
  const std::vector<int>& y;
  int dim;
  double c;  // inverse regularization
  std::vector<double> sample_weight;

  // theta packs [weights, bias]; the bias is unpenalized.
  double eval(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    grad = Eigen::VectorXd::Zero(dim + 1);
    double obj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double margin = theta(dim);
      for (std::size_t k = 0; k < x[i].nnz(); ++k) {
        margin += theta(x[i].idx[k]) * x[i].val[k];
      }
      const double ysign = y[i] == 1 ? 1.0 : -1.0;
      const double w = sample_weight[i];
      obj += w * softplus_stable(-ysign * margin);
      const double coeff = -w * ysign * stable_sigmoid(-ysign * margin);
      for (std::size_t k = 0; k < x[i].nnz(); ++k) {
        grad(x[i].idx[k]) += coeff * x[i].val[k];
      }
      grad(dim) += coeff;
    }
    const double inv_c = 1.0 / c;
    obj += 0.5 * inv_c * theta.head(dim).squaredNorm();
    grad.head(dim) += inv_c * theta.head(dim);
    return obj;
  }
};

// L-BFGS with Armijo backtracking; history 10, stop at ||g|| < 1e-6.
Eigen::VectorXd lbfgs_minimize(const LogisticProblem& prob, int max_iters,
                               double* final_grad_norm) {
  const int n = prob.dim + 1;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad(n);
  double obj = prob.eval(theta, grad);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  constexpr std::size_t kHistory = 10;
  constexpr double kTol = 1e-6;

  for (int iter = 0; iter < max_iters && grad.norm() >= kTol; ++iter) {
    // two-loop recursion
    Eigen::VectorXd q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    if (grad.dot(dir) >= 0.0) {  // not a descent direction; restart
      s_hist.clear();
      y_hist.clear();
      dir = -grad;
    }

    const double slope = grad.dot(dir);
    double step = 1.0;
    Eigen::VectorXd theta_new;
    Eigen::VectorXd grad_new(n);
    double obj_new = obj;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      theta_new = theta + step * dir;
      obj_new = prob.eval(theta_new, grad_new);
      if (obj_new <= obj + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Eigen::VectorXd s = theta_new - theta;
    Eigen::VectorXd yv = grad_new - grad;
    if (yv.dot(s) > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      if (s_hist.size() > kHistory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    theta = std::move(theta_new);
    grad = std::move(grad_new);
    obj = obj_new;
  }
  if (final_grad_norm) *final_grad_norm = grad.norm();
  return theta;
}

}  // namespace

double LogisticModel::decision(const SparseVec& x) const {
  double m = bias;
  for (std::size_t k = 0; k < x.nnz(); ++k) {
    if (x.idx[k] < weights.size()) m += weights(x.idx[k]) * x.val[k];
  }
  return m;
}

double LogisticModel::probability(const SparseVec& x) const {
  return stable_sigmoid(decision(x));
}

LogisticModel fit_logistic(const std::vector<SparseVec>& features,
                           const std::vector<int>& labels, int dimension,
                           double inverse_regularization, bool balanced,
                           std::uint64_t seed) {
  if (features.size() != labels.size() || features.empty()) {
    throw input_error("fit_logistic: features and labels must align");
  }
  std::int64_t pos = 0;
  for (int l : labels) pos += l;
  const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw input_error("fit_logistic: both classes required");
  }
  if (!(inverse_regularization > 0.0)) {
    throw input_error("fit_logistic: C must be positive");
  }

  LogisticProblem prob{features, labels, dimension, inverse_regularization, {}};
  prob.sample_weight.resize(labels.size());
  const double n = static_cast<double>(labels.size());
  // balanced: n / (2 * class count), the usual convention
  const double wpos = balanced ? n / (2.0 * static_cast<double>(pos)) : 1.0;
  const double wneg = balanced ? n / (2.0 * static_cast<double>(neg)) : 1.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    prob.sample_weight[i] = labels[i] == 1 ? wpos : wneg;
  }

  LogisticModel model;
  model.inverse_regularization = inverse_regularization;
  model.balanced = balanced;
  model.seed = seed;
  const Eigen::VectorXd theta = lbfgs_minimize(prob, 5000, &model.final_gradient_norm);
  model.weights = theta.head(dimension);
  model.bias = theta(dimension);
  return model;
}

double logistic_objective(const LogisticModel& model,
                          const std::vector<SparseVec>& features,
                          const std::vector<int>& labels,
                          Eigen::VectorXd* gradient_out) {
  std::int64_t pos = 0;
  for (int l : labels) pos += l;
  const std::int64_t neg = static_cast<std::int64_t>(labels.size()) - pos;
  const double n = static_cast<double>(labels.size());
  const double wpos = model.balanced ? n / (2.0 * static_cast<double>(pos)) : 1.0;
  const double wneg = model.balanced ? n / (2.0 * static_cast<double>(neg)) : 1.0;
  LogisticProblem prob{features, labels, static_cast<int>(model.weights.size()),
                       model.inverse_regularization, {}};
  prob.sample_weight.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    prob.sample_weight[i] = labels[i] == 1 ? wpos : wneg;
  }
  Eigen::VectorXd theta(model.weights.size() + 1);
  theta.head(model.weights.size()) = model.weights;
  theta(model.weights.size()) = model.bias;
  Eigen::VectorXd grad;
  const double obj = prob.eval(theta, grad);
  if (gradient_out) *gradient_out = grad;
  return obj;
}

Eigen::Vector4d position_features(int t) {
  if (t < 1) throw input_error("position_features: t >= 1");
  const double td = static_cast<double>(t);
  return {td, td * td, std::log1p(td), std::sqrt(td)};
}

namespace {

struct SplitView {
  std::vector<const StepViewTrajectory*> train, calibration, validation, test;
};

SplitView split_corpus(const StepViewCorpus& corpus, const SplitSpec& splits) {
  std::map<std::string, const StepViewTrajectory*> by_id;
  for (const auto& t : corpus) by_id[t.trajectory_id] = &t;
  auto collect = [&](const std::vector<std::string>& ids) {
    std::vector<const StepViewTrajectory*> out;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw input_error("split references unknown trajectory " + id);
      }
      out.push_back(it->second);
    }
    return out;
  };
  return {collect(splits.train_ids), collect(splits.calibration_ids),
          collect(splits.validation_ids), collect(splits.test_ids)};
}

int warning_label(const StepViewTrajectory& traj, int t, int horizon) {
  return (traj.outcome == 0 && t >= traj.length() - horizon) ? 1 : 0;
}

struct PrefixExamples {
  std::vector<SparseVec> x;
  std::vector<int> y;
  ScoredPrefixSet skeleton;
};

ScoredPrefix skeleton_row(const StepViewTrajectory& traj, int t, int horizon) {
  ScoredPrefix p;
  p.trajectory_id = traj.trajectory_id;
  p.step = t;
  p.length = traj.length();
  p.outcome = traj.outcome;
  p.label = warning_label(traj, t, horizon);
  return p;
}

SparseVec dense_to_sparse(const Eigen::VectorXd& v) {
  SparseVec s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    s.idx.push_back(static_cast<int>(i));
    s.val.push_back(v(i));
  }
  return s;
}

PrefixExamples position_examples(const std::vector<const StepViewTrajectory*>& split,
                                 int horizon, bool include_length) {
  PrefixExamples ex;
  for (const auto* traj : split) {
    for (int t = 1; t <= traj->length(); ++t) {
      Eigen::VectorXd f;
      const Eigen::Vector4d base = position_features(t);
      if (include_length) {
        f.resize(5);
        f << base, static_cast<double>(traj->length());
      } else {
        f = base;
      }
      ex.x.push_back(dense_to_sparse(f));
      ex.y.push_back(warning_label(*traj, t, horizon));
      ex.skeleton.push_back(skeleton_row(*traj, t, horizon));
    }
  }
  return ex;
}

std::string prefix_text(const StepViewTrajectory& traj, int t) {
  std::string text;
  for (int i = 0; i < t; ++i) {
    if (i > 0) text += "\n";
    text += serialize_record(traj.records[i]);
  }
  return text;
}

ControlReport score_and_report(const std::string& kind, const LogisticModel& model,
                               PrefixExamples& test) {
  for (std::size_t i = 0; i < test.x.size(); ++i) {
    test.skeleton[i].score = model.probability(test.x[i]);
  }
  ControlReport rep;
  rep.kind = kind;
  rep.ap = average_precision(test.skeleton);
  rep.auroc = auroc(test.skeleton);
  rep.extra = nlohmann::json{{"final_gradient_norm", model.final_gradient_norm}};
  return rep;
}

ControlReport control_tfidf_lr(const SplitView& view, const ControlConfig& cfg) {
  std::vector<std::string> train_texts;
  PrefixExamples train_ex, test_ex;
  for (const auto* traj : view.train) {
    for (int t = 1; t <= traj->length(); ++t) {
      train_texts.push_back(prefix_text(*traj, t));
      train_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      train_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }
  const VectorizerModel vec =
      VectorizerModel::fit(train_texts, probe_encoder_config());
  for (const auto& text : train_texts) train_ex.x.push_back(vec.encode(text));
  for (const auto* traj : view.test) {
    for (int t = 1; t <= traj->length(); ++t) {
      test_ex.x.push_back(vec.encode(prefix_text(*traj, t)));
      test_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      test_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }
  const LogisticModel model = fit_logistic(train_ex.x, train_ex.y, vec.dimension(),
                                           cfg.logistic_c, true, cfg.seed);
  return score_and_report("tfidf_lr", model, test_ex);
}

ControlReport control_task_prior(const SplitView& view, const ControlConfig& cfg) {
  // Deployment-visible trajectory identity: task id plus whitelisted
  // metadata tokens from the first step.
  std::map<std::string, int> vocab;
  auto feature_keys = [&](const StepViewTrajectory& traj) {
    std::vector<std::string> keys = {"task:" + traj.task_id};
    if (!traj.records.empty()) {
      for (const auto& line : traj.records.front().metadata_lines) {
        for (const auto& tok : tokenize(line)) keys.push_back("meta:" + tok);
      }
    }
    return keys;
  };
  for (const auto* traj : view.train) {
    for (const auto& k : feature_keys(*traj)) {
      vocab.emplace(k, static_cast<int>(vocab.size()));
    }
  }
  auto encode = [&](const StepViewTrajectory& traj) {
    std::set<int> on;
    for (const auto& k : feature_keys(traj)) {
      const auto it = vocab.find(k);
      if (it != vocab.end()) on.insert(it->second);
    }
    SparseVec v;
    for (int i : on) {
      v.idx.push_back(i);
      v.val.push_back(1.0);
    }
    return v;
  };
  PrefixExamples train_ex, test_ex;
  for (const auto* traj : view.train) {
    const SparseVec f = encode(*traj);
    for (int t = 1; t <= traj->length(); ++t) {
      train_ex.x.push_back(f);
      train_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      train_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }
  for (const auto* traj : view.test) {
    const SparseVec f = encode(*traj);
    for (int t = 1; t <= traj->length(); ++t) {
      test_ex.x.push_back(f);
      test_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      test_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }
  const LogisticModel model =
      fit_logistic(train_ex.x, train_ex.y, static_cast<int>(vocab.size()),
                   cfg.logistic_c, true, cfg.seed);
  return score_and_report("task_prior", model, test_ex);
}

// Mean-pooled StepView MLP probe: hidden GELU layer and a sigmoid head,
// trained with the shared optimizer defaults.
ControlReport control_pooled_mlp(const SplitView& view, const ControlConfig& cfg) {
  std::vector<std::string> step_texts;
  for (const auto* traj : view.train) {
    for (const auto& r : traj->records) step_texts.push_back(serialize_record(r));
  }
  EncoderConfig enc_cfg;  // main-path encoder settings
  const VectorizerModel vec = VectorizerModel::fit(step_texts, enc_cfg);

  auto pooled = [&](const StepViewTrajectory& traj, int t) {
    std::map<int, double> acc;
    for (int i = 0; i < t; ++i) {
      const SparseVec s = vec.encode(serialize_record(traj.records[i]));
      for (std::size_t k = 0; k < s.nnz(); ++k) acc[s.idx[k]] += s.val[k];
    }
    SparseVec v;
    const double inv = 1.0 / static_cast<double>(t);
    for (const auto& [i, val] : acc) {
      v.idx.push_back(i);
      v.val.push_back(val * inv);
    }
    return v;
  };

  PrefixExamples train_ex, test_ex;
  for (const auto* traj : view.train) {
    for (int t = 1; t <= traj->length(); ++t) {
      train_ex.x.push_back(pooled(*traj, t));
      train_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      train_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }
  for (const auto* traj : view.test) {
    for (int t = 1; t <= traj->length(); ++t) {
      test_ex.x.push_back(pooled(*traj, t));
      test_ex.y.push_back(warning_label(*traj, t, cfg.horizon));
      test_ex.skeleton.push_back(skeleton_row(*traj, t, cfg.horizon));
    }
  }

  const int hidden = cfg.mlp_hidden;
  const int dim = vec.dimension();
  Rng init_rng(derive_seed(cfg.seed, 11));
  auto glorot = [&](int rows, int cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = init_rng.uniform(-a, a);
    }
    return m;
  };
  Eigen::MatrixXd w1 = glorot(hidden, dim);
  Eigen::MatrixXd b1 = Eigen::MatrixXd::Zero(hidden, 1);
  Eigen::MatrixXd w2 = glorot(hidden, 1);
  Eigen::MatrixXd b2 = Eigen::MatrixXd::Zero(1, 1);
  std::map<std::string, ad::AdamWState> opt;
  ad::AdamWHyper hyper;

  Rng order_rng(derive_seed(cfg.seed, 12));
  std::vector<int> order(train_ex.x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < cfg.mlp_epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.mlp_batch)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.mlp_batch));
      ad::Tape tape;
      ad::Var vw1 = tape.leaf(w1), vb1 = tape.leaf(b1);
      ad::Var vw2 = tape.leaf(w2), vb2 = tape.leaf(b2);
      std::vector<ad::Var> scores;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        const int idx = order[i];
        ad::Var h = ad::gelu(
            ad::add(ad::linear_sparse(vw1, train_ex.x[idx]), vb1));
        ad::Var act = ad::add(ad::dot(vw2, h), vb2);
        scores.push_back(ad::sigmoid(act));
        labels.push_back(train_ex.y[idx]);
      }
      ad::Var loss = ad::bce_prefix_loss(scores, labels);
      tape.backward(loss);
      ad::adamw_step(w1, vw1.grad(), opt["w1"], hyper, "w1");
      ad::adamw_step(b1, vb1.grad(), opt["b1"], hyper, "b1");
      ad::adamw_step(w2, vw2.grad(), opt["w2"], hyper, "w2");
      ad::adamw_step(b2, vb2.grad(), opt["b2"], hyper, "b2");
    }
  }

  auto forward = [&](const SparseVec& x) {
    Eigen::VectorXd h = b1.col(0);
    for (std::size_t k = 0; k < x.nnz(); ++k) h += x.val[k] * w1.col(x.idx[k]);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      h(i) = 0.5 * h(i) * (1.0 + std::erf(h(i) * 0.70710678118654752440));
    }
    return stable_sigmoid(w2.col(0).dot(h) + b2(0, 0));
  };
  for (std::size_t i = 0; i < test_ex.x.size(); ++i) {
    test_ex.skeleton[i].score = forward(test_ex.x[i]);
  }
  ControlReport rep;
  rep.kind = "pooled_mlp";
  rep.ap = average_precision(test_ex.skeleton);
  rep.auroc = auroc(test_ex.skeleton);
  rep.extra = nlohmann::json{{"hidden", hidden}, {"epochs", cfg.mlp_epochs}};
  return rep;
}

std::uint64_t mix_id(const std::string& id, int t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : id) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  h ^= static_cast<std::uint64_t>(t);
  h *= 1099511628211ULL;
  return h;
}

// Prefix-expanded corpus for the content-scrambled control: one example
// per visible prefix, permuted (or kept in order), labeled at its end.
std::vector<EncodedTrajectory> expand_prefixes(
    const std::vector<const StepViewTrajectory*>& split,
    const VectorizerModel& vec, int horizon, bool scramble, std::uint64_t seed) {
  std::vector<EncodedTrajectory> out;
  for (const auto* traj : split) {
    std::vector<SparseVec> encoded;
    encoded.reserve(traj->records.size());
    for (const auto& r : traj->records) {
      encoded.push_back(vec.encode(serialize_record(r)));
    }
    for (int t = 1; t <= traj->length(); ++t) {
      EncodedTrajectory e;
      e.trajectory_id = traj->trajectory_id + "#" + std::to_string(t);
      e.outcome = traj->outcome;
      std::vector<int> order(t);
      for (int i = 0; i < t; ++i) order[i] = i;
      if (scramble) {
        Rng rng(derive_seed(seed, mix_id(traj->trajectory_id, t)));
        rng.shuffle(order);
      }
      for (int i : order) e.steps.push_back(encoded[i]);
      e.labels.assign(t, 0);
      e.labels[t - 1] = warning_label(*traj, t, horizon);
      out.push_back(std::move(e));
    }
  }
  return out;
}

ControlReport control_scrambled(const SplitView& view, const ControlConfig& cfg) {
  std::vector<std::string> step_texts;
  for (const auto* traj : view.train) {
    for (const auto& r : traj->records) step_texts.push_back(serialize_record(r));
  }
  EncoderConfig enc_cfg;
  const VectorizerModel vec = VectorizerModel::fit(step_texts, enc_cfg);
  const std::string vhash = vec.content_hash();

  auto run_variant = [&](bool scramble) {
    const auto train =
        expand_prefixes(view.train, vec, cfg.horizon, scramble, cfg.seed);
    const auto cal =
        expand_prefixes(view.calibration, vec, cfg.horizon, scramble, cfg.seed + 1);
    const auto val =
        expand_prefixes(view.validation, vec, cfg.horizon, scramble, cfg.seed + 2);
    const auto test =
        expand_prefixes(view.test, vec, cfg.horizon, scramble, cfg.seed + 3);
    MonitorConfig mc = cfg.monitor;
    mc.horizon = cfg.horizon;
    const TrainResult tr = train_monitor(train, cal, val, mc, vhash,
                                         vec.dimension(),
                                         LossPositions::kFinalPosition);
    ScoredPrefixSet set;
    for (const auto& traj : test) {
      const RiskSeries rs = score_prefix(tr.model, traj);
      ScoredPrefix p;
      p.trajectory_id = traj.trajectory_id;
      p.step = static_cast<int>(rs.scores.size());
      p.length = static_cast<int>(rs.scores.size());
      p.outcome = traj.outcome;
      p.label = traj.labels.back();
      p.score = rs.scores.back();
      set.push_back(std::move(p));
    }
    return std::pair<double, double>{average_precision(set), auroc(set)};
  };

  const auto [ap_orig, roc_orig] = run_variant(false);
  const auto [ap_scram, roc_scram] = run_variant(true);
  ControlReport rep;
  rep.kind = "scrambled";
  rep.ap = ap_scram;
  rep.auroc = roc_scram;
  rep.extra = nlohmann::json{{"ap_original", ap_orig},
                             {"auroc_original", roc_orig},
                             {"ap_delta", ap_orig - ap_scram}};
  return rep;
}

}  // namespace

nlohmann::json ControlReport::to_json() const {
  return nlohmann::json{
      {"kind", kind}, {"ap", ap}, {"auroc", auroc}, {"extra", extra}};
}

ControlReport run_control(const std::string& kind, const StepViewCorpus& corpus,
                          const SplitSpec& splits, const ControlConfig& config) {
  const SplitView view = split_corpus(corpus, splits);
  if (kind == "t_only" || kind == "t_plus_T_oracle") {
    const bool oracle = kind == "t_plus_T_oracle";
    PrefixExamples train_ex = position_examples(view.train, config.horizon, oracle);
    PrefixExamples test_ex = position_examples(view.test, config.horizon, oracle);
    const LogisticModel model =
        fit_logistic(train_ex.x, train_ex.y, oracle ? 5 : 4, config.logistic_c,
                     true, config.seed);
    return score_and_report(kind, model, test_ex);
  }
  if (kind == "task_prior") return control_task_prior(view, config);
  if (kind == "tfidf_lr") return control_tfidf_lr(view, config);
  if (kind == "pooled_mlp") return control_pooled_mlp(view, config);
  if (kind == "scrambled") return control_scrambled(view, config);
  throw input_error("run_control: unknown control kind '" + kind + "'");
}

MpeAuditSet build_mpe_audit_set(const StepViewCorpus& corpus,
                                const std::string& protocol, int horizon) {
  if (protocol != "all_prefix" && protocol != "matched_nonterminal") {
    throw input_error("mpe audit: protocol must be all_prefix|matched_nonterminal");
  }
  constexpr std::size_t kStepCap = 1200;
  constexpr std::size_t kPrefixCap = 5000;
  MpeAuditSet set;
  set.protocol = protocol;
  for (const auto& traj : corpus) {
    const int T = traj.length();
    std::vector<std::string> step_texts;
    step_texts.reserve(T);
    for (const auto& r : traj.records) {
      std::string s = r.status + " " + r.action_text + " " + r.result_text;
      if (s.size() > kStepCap) s.resize(kStepCap);
      step_texts.push_back(std::move(s));
    }
    for (int t = 1; t <= T; ++t) {
      bool keep = true;
      bool positive = false;
      if (protocol == "all_prefix") {
        positive = traj.outcome == 0 && t >= T - horizon;
      } else {
        keep = t >= T - horizon && t < T;
        positive = traj.outcome == 0;
      }
      if (!keep) continue;
      std::string text;
      for (int i = 0; i < t; ++i) {
        if (i > 0) text += "\n";
        text += step_texts[i];
      }
      if (text.size() > kPrefixCap) {
        text = text.substr(text.size() - kPrefixCap);
      }
      auto& texts = positive ? set.positive_texts : set.negative_texts;
      auto& prov = positive ? set.positive_provenance : set.negative_provenance;
      texts.push_back(std::move(text));
      prov.emplace_back(traj.trajectory_id, t);
    }
  }
  if (set.positive_texts.empty() || set.negative_texts.empty()) {
    throw input_error("mpe audit: protocol left a class empty (positives=" +
                      std::to_string(set.positive_texts.size()) + ", negatives=" +
                      std::to_string(set.negative_texts.size()) + ")");
  }
  return set;
}

nlohmann::json run_mpe_audit(const StepViewCorpus& corpus, const SplitSpec& splits,
                             const std::string& protocol, int horizon,
                             double tail_trim, int replicates, std::uint64_t seed) {
  const SplitView view = split_corpus(corpus, splits);
  auto materialize = [](const std::vector<const StepViewTrajectory*>& split) {
    StepViewCorpus c;
    for (const auto* t : split) c.push_back(*t);
    return c;
  };
  const MpeAuditSet train_set =
      build_mpe_audit_set(materialize(view.train), protocol, horizon);
  const MpeAuditSet test_set =
      build_mpe_audit_set(materialize(view.test), protocol, horizon);

  std::vector<std::string> train_texts = train_set.positive_texts;
  train_texts.insert(train_texts.end(), train_set.negative_texts.begin(),
                     train_set.negative_texts.end());
  const VectorizerModel vec =
      VectorizerModel::fit(train_texts, probe_encoder_config());

  std::vector<SparseVec> x;
  std::vector<int> y;
  for (const auto& t : train_set.positive_texts) {
    x.push_back(vec.encode(t));
    y.push_back(1);
  }
  for (const auto& t : train_set.negative_texts) {
    x.push_back(vec.encode(t));
    y.push_back(0);
  }
  const LogisticModel probe = fit_logistic(x, y, vec.dimension(), 0.5, true, seed);

  std::vector<double> pos_scores, neg_scores;
  for (const auto& t : test_set.positive_texts) {
    pos_scores.push_back(probe.probability(vec.encode(t)));
  }
  for (const auto& t : test_set.negative_texts) {
    neg_scores.push_back(probe.probability(vec.encode(t)));
  }
  const MpeResult res =
      mpe_bootstrap(pos_scores, neg_scores, replicates, seed, tail_trim);
  return nlohmann::json{{"protocol", protocol},
                        {"horizon", horizon},
                        {"tail_trim", tail_trim},
                        {"replicates", res.replicates},
                        {"train_prefixes", train_texts.size()},
                        {"test_positive", res.n_positive},
                        {"test_negative", res.n_negative},
                        {"audit_positive_rate",
                         static_cast<double>(res.n_positive) /
                             static_cast<double>(res.n_positive + res.n_negative)},
                        {"kappa_hat", res.kappa_hat},
                        {"pi_hat", res.pi_hat},
                        {"ci_lower", res.ci_lower},
                        {"ci_upper", res.ci_upper}};
}

}  // namespace prefixguard
