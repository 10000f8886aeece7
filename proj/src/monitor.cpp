#include "prefixguard/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <map>
#include <set>

#include "prefixguard/artifact.hpp"
#include "prefixguard/autodiff.hpp"
#include "prefixguard/common.hpp"

namespace prefixguard {

void MonitorConfig::validate() const {
  if (alphabet_size < 2 || state_budget < 2) {
    throw input_error("monitor config: K and Q must be >= 2");
  }
  if (symbolizer_hidden < 1) throw input_error("monitor config: hidden width >= 1");
  if (!(gumbel_temperature > 0.0)) {
    throw input_error("monitor config: temperature must be positive");
  }
  if (!(learning_rate > 0.0) || weight_decay < 0.0) {
    throw input_error("monitor config: rates must be positive");
  }
  if (batch_size < 1) throw input_error("monitor config: batch size >= 1");
  if (epochs < 1) throw input_error("monitor config: epochs >= 1");
  if (eval_every < 1) throw input_error("monitor config: eval_every >= 1");
  if (max_sequence_length < 1) {
    throw input_error("monitor config: max sequence length >= 1");
  }
  if (horizon < 1) throw input_error("monitor config: horizon >= 1");
  if (backend != "gru" && backend != "fsm") {
    throw input_error("monitor config: backend must be gru or fsm");
  }
}

nlohmann::json MonitorConfig::to_json() const {
  return nlohmann::json{{"alphabet_size", alphabet_size},
                        {"state_budget", state_budget},
                        {"symbolizer_hidden", symbolizer_hidden},
                        {"gumbel_temperature", gumbel_temperature},
                        {"lambda_pred", lambda_pred},
                        {"lambda_balance", lambda_balance},
                        {"beta", beta},
                        {"learning_rate", learning_rate},
                        {"weight_decay", weight_decay},
                        {"batch_size", batch_size},
                        {"epochs", epochs},
                        {"eval_every", eval_every},
                        {"max_sequence_length", max_sequence_length},
                        {"horizon", horizon},
                        {"backend", backend},
                        {"seed", seed}};
}

MonitorConfig MonitorConfig::from_json(const nlohmann::json& j) {
  MonitorConfig c;
  c.alphabet_size = j.value("alphabet_size", c.alphabet_size);
  c.state_budget = j.value("state_budget", c.alphabet_size);
  c.symbolizer_hidden = j.value("symbolizer_hidden", c.symbolizer_hidden);
  c.gumbel_temperature = j.value("gumbel_temperature", c.gumbel_temperature);
  c.lambda_pred = j.value("lambda_pred", c.lambda_pred);
  c.lambda_balance = j.value("lambda_balance", c.lambda_balance);
  c.beta = j.value("beta", c.beta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
  c.horizon = j.value("horizon", c.horizon);
  c.backend = j.value("backend", c.backend);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<EncodedTrajectory> encode_corpus(const StepViewCorpus& corpus,
                                             const VectorizerModel& vectorizer,
                                             int horizon) {
  std::vector<EncodedTrajectory> out;
  out.reserve(corpus.size());
  for (const auto& traj : corpus) {
    EncodedTrajectory e;
    e.trajectory_id = traj.trajectory_id;
    e.outcome = traj.outcome;
    const int T = traj.length();
    e.steps.reserve(T);
    for (const auto& r : traj.records) {
      e.steps.push_back(vectorizer.encode(serialize_record(r)));
    }
    e.labels.resize(T);
    for (int t = 1; t <= T; ++t) {
      e.labels[t - 1] = (traj.outcome == 0 && t >= T - horizon) ? 1 : 0;
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

double gelu_exact(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& x) {
  Eigen::VectorXd y = (x.array() - x.maxCoeff()).exp();
  return y / y.sum();
}

Eigen::VectorXd sparse_matvec(const Eigen::MatrixXd& w, const SparseVec& x) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(w.rows());
  for (std::size_t k = 0; k < x.nnz(); ++k) y += x.val[k] * w.col(x.idx[k]);
  return y;
}

// Tape-free deterministic forward pass shared by validation scoring and
// deployment; mirrors the tape construction op for op so both paths agree
// bit for bit.
struct PlainForward {
  const MonitorModel& m;

  Eigen::VectorXd symbol_logits(const SparseVec& e) const {
    Eigen::VectorXd h = sparse_matvec(m.w1, e);
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = gelu_exact(h(i));
    return m.w2 * h;
  }

  RiskSeries run(const EncodedTrajectory& traj) const {
    RiskSeries rs;
    rs.trajectory_id = traj.trajectory_id;
    const bool gru = m.config.backend == "gru";
    Eigen::VectorXd h = Eigen::VectorXd::Zero(m.config.state_budget);
    Eigen::RowVectorXd q;
    std::vector<Eigen::MatrixXd> soft_t;
    if (!gru) {
      q = softmax_vec(m.initial_logits.col(0)).transpose();
      soft_t.reserve(m.transitions.size());
      for (const auto& tk : m.transitions) {
        soft_t.push_back(tk.unaryExpr([](double v) { return softplus_stable(v); }));
      }
    }
    for (const auto& e : traj.steps) {
      const Eigen::VectorXd logits = symbol_logits(e);
      int arg = 0;
      for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits(i) > logits(arg)) arg = static_cast<int>(i);
      }
      rs.symbols.push_back(arg);
      // scaled exactly like the training graph: multiply by 1/tau
      const Eigen::VectorXd alpha =
          softmax_vec((1.0 / m.config.gumbel_temperature) * logits);
      double activation;
      if (gru) {
        Eigen::VectorXd x = m.proj * alpha;
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = gelu_exact(x(i));
        const Eigen::VectorXd z =
            (m.wz * x + m.uz * h + m.bz.col(0)).unaryExpr(&stable_sigmoid);
        const Eigen::VectorXd r =
            (m.wr * x + m.ur * h + m.br.col(0)).unaryExpr(&stable_sigmoid);
        const Eigen::VectorXd cand =
            (m.wh * x + m.uh * r.cwiseProduct(h) + m.bh.col(0)).array().tanh();
        h = ((1.0 - z.array()) * h.array() + z.array() * cand.array()).matrix();
        activation = m.head_w.col(0).dot(h) + m.head_b(0, 0);
      } else {
        Eigen::MatrixXd mixed =
            Eigen::MatrixXd::Zero(m.config.state_budget, m.config.state_budget);
        for (std::size_t k = 0; k < soft_t.size(); ++k) {
          mixed += alpha(static_cast<Eigen::Index>(k)) * soft_t[k];
        }
        Eigen::RowVectorXd raw = q * mixed;
        const double mass = raw.sum();
        if (!(mass > 1e-12)) {
          throw std::runtime_error("fsm scoring: transition mass degenerate");
        }
        q = (1.0 / mass) * raw;
        activation = m.head_w.col(0).dot(q.transpose()) + m.head_b(0, 0);
      }
      rs.scores.push_back(stable_sigmoid(activation));
    }
    return rs;
  }
};

struct NamedParam {
  std::string name;
  Eigen::MatrixXd* value;
};

std::vector<NamedParam> parameter_list(MonitorModel& m) {
  std::vector<NamedParam> params = {{"w1", &m.w1}, {"w2", &m.w2}};
  if (m.config.backend == "gru") {
    params.push_back({"proj", &m.proj});
    params.push_back({"wz", &m.wz});
    params.push_back({"uz", &m.uz});
    params.push_back({"bz", &m.bz});
    params.push_back({"wr", &m.wr});
    params.push_back({"ur", &m.ur});
    params.push_back({"br", &m.br});
    params.push_back({"wh", &m.wh});
    params.push_back({"uh", &m.uh});
    params.push_back({"bh", &m.bh});
  } else {
    for (std::size_t k = 0; k < m.transitions.size(); ++k) {
      params.push_back({"t" + std::to_string(k), &m.transitions[k]});
    }
    params.push_back({"theta0", &m.initial_logits});
  }
  params.push_back({"head_w", &m.head_w});
  params.push_back({"head_b", &m.head_b});
  return params;
}

Eigen::MatrixXd glorot(Rng& rng, int rows, int cols) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-a, a);
  }
  return m;
}

MonitorModel init_model(const MonitorConfig& cfg, int dim,
                        const std::string& vectorizer_hash) {
  MonitorModel m;
  m.config = cfg;
  m.vectorizer_hash = vectorizer_hash;
  m.training_seed = cfg.seed;
  Rng rng(derive_seed(cfg.seed, 0));
  const int K = cfg.alphabet_size, Q = cfg.state_budget, H = cfg.symbolizer_hidden;
  m.w1 = glorot(rng, H, dim);
  m.w2 = glorot(rng, K, H);
  if (cfg.backend == "gru") {
    m.proj = glorot(rng, Q, K);
    m.wz = glorot(rng, Q, Q);
    m.uz = glorot(rng, Q, Q);
    m.wr = glorot(rng, Q, Q);
    m.ur = glorot(rng, Q, Q);
    m.wh = glorot(rng, Q, Q);
    m.uh = glorot(rng, Q, Q);
    m.bz = Eigen::MatrixXd::Zero(Q, 1);
    m.br = Eigen::MatrixXd::Zero(Q, 1);
    m.bh = Eigen::MatrixXd::Zero(Q, 1);
  } else {
    m.transitions.reserve(K);
    for (int k = 0; k < K; ++k) m.transitions.push_back(glorot(rng, Q, Q));
    m.initial_logits = Eigen::MatrixXd::Zero(Q, 1);
  }
  m.head_w = glorot(rng, Q, 1);
  m.head_b = Eigen::MatrixXd::Zero(1, 1);
  return m;
}

struct TrajectoryGraph {
  std::vector<ad::Var> scores;
  std::vector<int> labels;
};

// Builds the differentiable forward pass for one (possibly truncated)
// trajectory. `gumbel_rng == nullptr` selects the deterministic symbol path.
TrajectoryGraph tape_forward(const std::map<std::string, ad::Var>& leaves,
                             const MonitorModel& m, const EncodedTrajectory& traj,
                             int start, Rng* gumbel_rng,
                             std::vector<ad::Var>& alphas) {
  const bool gru = m.config.backend == "gru";
  const auto mode =
      gumbel_rng ? ad::GumbelMode::kSampled : ad::GumbelMode::kDeterministic;
  ad::Tape& tape = *leaves.at("w1").tape();

  TrajectoryGraph g;
  ad::Var h;
  ad::Var q;
  std::vector<ad::Var> trans;
  ad::GruParams gp;
  if (gru) {
    gp = {leaves.at("wz"), leaves.at("uz"), leaves.at("bz"),
          leaves.at("wr"), leaves.at("ur"), leaves.at("br"),
          leaves.at("wh"), leaves.at("uh"), leaves.at("bh")};
    h = tape.leaf(Eigen::MatrixXd::Zero(m.config.state_budget, 1));
  } else {
    for (int k = 0; k < m.config.alphabet_size; ++k) {
      trans.push_back(leaves.at("t" + std::to_string(k)));
    }
    q = ad::transpose(ad::softmax(leaves.at("theta0")));
  }
  for (int t = start; t < static_cast<int>(traj.steps.size()); ++t) {
    ad::Var hidden = ad::gelu(ad::linear_sparse(leaves.at("w1"), traj.steps[t]));
    ad::Var logits = ad::matmul(leaves.at("w2"), hidden);
    ad::Var alpha =
        ad::gumbel_softmax(logits, m.config.gumbel_temperature, mode, gumbel_rng);
    alphas.push_back(alpha);
    ad::Var activation;
    if (gru) {
      ad::Var x = ad::gelu(ad::matmul(leaves.at("proj"), alpha));
      h = ad::gru_cell(x, h, gp);
      activation = ad::add(ad::dot(leaves.at("head_w"), h), leaves.at("head_b"));
    } else {
      q = ad::fsm_update(q, alpha, trans);
      activation = ad::add(ad::dot(leaves.at("head_w"), ad::transpose(q)),
                           leaves.at("head_b"));
    }
    g.scores.push_back(ad::sigmoid(activation));
    g.labels.push_back(traj.labels[t]);
  }
  return g;
}

double pooled_auprc(const MonitorModel& m,
                    const std::vector<EncodedTrajectory>& corpus,
                    LossPositions positions) {
  PlainForward fwd{m};
  ScoredPrefixSet set;
  for (const auto& traj : corpus) {
    const RiskSeries rs = fwd.run(traj);
    const std::size_t first =
        positions == LossPositions::kFinalPosition ? rs.scores.size() - 1 : 0;
    for (std::size_t t = first; t < rs.scores.size(); ++t) {
      ScoredPrefix p;
      p.trajectory_id = traj.trajectory_id;
      p.step = static_cast<int>(t) + 1;
      p.length = static_cast<int>(traj.steps.size());
      p.outcome = traj.outcome;
      p.label = traj.labels[t];
      p.score = rs.scores[t];
      set.push_back(std::move(p));
    }
  }
  return average_precision(set);
}

}  // namespace

TrainResult train_monitor(const std::vector<EncodedTrajectory>& train,
                          const std::vector<EncodedTrajectory>& calibration,
                          const std::vector<EncodedTrajectory>& validation,
                          const MonitorConfig& config,
                          const std::string& vectorizer_hash,
                          int feature_dimension, LossPositions positions) {
  config.validate();
  if (feature_dimension < 1) {
    throw input_error("train_monitor: feature dimension must be >= 1");
  }
  if (train.empty()) throw input_error("train_monitor: empty training set");
  if (calibration.empty()) {
    throw input_error("train_monitor: empty calibration set");
  }
  {
    std::set<std::string> train_ids;
    for (const auto& t : train) train_ids.insert(t.trajectory_id);
    for (const auto& c : calibration) {
      if (train_ids.count(c.trajectory_id)) {
        throw input_error("train_monitor: calibration overlaps training set");
      }
    }
  }
  bool val_has_pos = false, val_has_neg = false;
  for (const auto& v : validation) {
    for (int l : v.labels) (l ? val_has_pos : val_has_neg) = true;
  }
  if (!val_has_pos || !val_has_neg) {
    throw input_error("train_monitor: validation split has a single label class");
  }

  MonitorModel model = init_model(config, feature_dimension, vectorizer_hash);
  std::map<std::string, ad::AdamWState> opt_state;
  ad::AdamWHyper hyper;
  hyper.learning_rate = config.learning_rate;
  hyper.weight_decay = config.weight_decay;

  Rng order_rng(derive_seed(config.seed, 1));
  Rng gumbel_rng(derive_seed(config.seed, 2));

  TrainReport report;
  MonitorModel best = model;
  double best_auprc = -1.0;
  int best_epoch = -1;

  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0, epoch_pred = 0.0, epoch_bal = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      ad::Tape tape;
      std::map<std::string, ad::Var> leaves;
      auto params = parameter_list(model);
      for (const auto& p : params) leaves.emplace(p.name, tape.leaf(*p.value));

      std::vector<ad::Var> alphas;
      ad::Var pred_sum;
      int count = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& traj = train[order[i]];
        const int start = std::max(
            0, static_cast<int>(traj.steps.size()) - config.max_sequence_length);
        TrajectoryGraph g =
            tape_forward(leaves, model, traj, start, &gumbel_rng, alphas);
        if (positions == LossPositions::kFinalPosition) {
          g.scores = {g.scores.back()};
          g.labels = {g.labels.back()};
        }
        ad::Var traj_loss = ad::bce_prefix_loss(g.scores, g.labels);
        pred_sum = (count == 0) ? traj_loss : ad::add(pred_sum, traj_loss);
        ++count;
      }
      ad::Var pred = ad::affine(pred_sum, 1.0 / count, 0.0);
      ad::Var bal = ad::balance_loss(alphas, config.beta);
      ad::Var loss = ad::add(ad::affine(pred, config.lambda_pred, 0.0),
                             ad::affine(bal, config.lambda_balance, 0.0));
      tape.backward(loss);

      epoch_loss += loss.scalar();
      epoch_pred += pred.scalar();
      epoch_bal += bal.scalar();
      ++batches;

      for (const auto& p : params) {
        ad::adamw_step(*p.value, leaves.at(p.name).grad(), opt_state[p.name],
                       hyper, p.name);
      }
    }
    report.train_loss.push_back(epoch_loss / batches);
    report.pred_part.push_back(epoch_pred / batches);
    report.balance_part.push_back(epoch_bal / batches);

    if ((epoch + 1) % config.eval_every == 0) {
      const double auprc = pooled_auprc(model, validation, positions);
      report.val_auprc.push_back(auprc);
      if (auprc > best_auprc) {
        best_auprc = auprc;
        best_epoch = epoch;
        best = model;
      }
    } else {
      report.val_auprc.push_back(std::nan(""));
    }
  }

  report.best_epoch = best_epoch;
  report.best_val_auprc = best_auprc;
  report.best_checkpoint_id =
      "epoch" + std::to_string(best_epoch) + ".seed" + std::to_string(config.seed);
  TrainResult result;
  result.model = std::move(best);
  result.report = std::move(report);
  return result;
}

RiskSeries score_prefix(const MonitorModel& model,
                        const EncodedTrajectory& trajectory) {
  return PlainForward{model}.run(trajectory);
}

std::vector<int> hard_symbolize(const MonitorModel& model,
                                const EncodedTrajectory& trajectory) {
  return PlainForward{model}.run(trajectory).symbols;
}

ScoredPrefixSet score_corpus(const MonitorModel& model,
                             const std::vector<EncodedTrajectory>& corpus) {
  ScoredPrefixSet set;
  for (const auto& traj : corpus) {
    const RiskSeries rs = score_prefix(model, traj);
    for (std::size_t t = 0; t < rs.scores.size(); ++t) {
      ScoredPrefix p;
      p.trajectory_id = traj.trajectory_id;
      p.step = static_cast<int>(t) + 1;
      p.length = static_cast<int>(traj.steps.size());
      p.outcome = traj.outcome;
      p.label = traj.labels[t];
      p.score = rs.scores[t];
      set.push_back(std::move(p));
    }
  }
  return set;
}

void require_vectorizer(const MonitorModel& model, const VectorizerModel& vec) {
  if (model.vectorizer_hash != vec.content_hash()) {
    throw input_error("vectorizer hash mismatch: model was trained against a "
                      "different frozen encoder");
  }
}

ThresholdResult select_threshold(const ScoredPrefixSet& calibration,
                                 const ThresholdPolicy& policy) {
  if (calibration.empty()) throw input_error("select_threshold: empty set");
  std::vector<double> scores;
  scores.reserve(calibration.size());
  bool has_pos = false, has_neg = false;
  for (const auto& p : calibration) {
    scores.push_back(p.score);
    (p.label ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) {
    throw input_error("select_threshold: calibration needs both classes");
  }
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> candidates;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    candidates.push_back(scores[i]);
    if (i + 1 < scores.size()) {
      candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
    }
  }
  std::sort(candidates.begin(), candidates.end());

  ThresholdResult result;
  if (policy.kind == ThresholdPolicy::Kind::kF1) {
    double best_f1 = -1.0, best_gamma = candidates.front();
    for (const double g : candidates) {
      const OperatingPoint op = confusion_at(calibration, g);
      const double f1 = op.f1.value_or(0.0);
      if (f1 > best_f1 || (f1 == best_f1 && g > best_gamma)) {
        best_f1 = f1;
        best_gamma = g;
      }
    }
    result.gamma = best_gamma;
    return result;
  }

  // far_cap: trajectory-level FAR over successful calibration trajectories.
  const auto series = group_by_trajectory(calibration);
  std::vector<double> success_max;
  for (const auto& s : series) {
    if (s.outcome == 1) {
      success_max.push_back(*std::max_element(s.scores.begin(), s.scores.end()));
    }
  }
  if (success_max.empty()) {
    throw input_error("select_threshold: far cap needs successful trajectories");
  }
  auto far_at = [&](double gamma) {
    std::size_t alerted = 0;
    for (double m : success_max) alerted += (m >= gamma) ? 1 : 0;
    return static_cast<double>(alerted) / static_cast<double>(success_max.size());
  };
  for (const double g : candidates) {
    if (far_at(g) <= policy.far_cap) {
      result.gamma = g;
      return result;
    }
  }
  result.gamma = std::numeric_limits<double>::infinity();
  result.unattainable = true;
  return result;
}

nlohmann::json TrainReport::to_json() const {
  auto series = [](const std::vector<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : v) {
      if (std::isnan(x)) arr.push_back(nullptr);
      else arr.push_back(x);
    }
    return arr;
  };
  return nlohmann::json{{"train_loss", series(train_loss)},
                        {"pred_part", series(pred_part)},
                        {"balance_part", series(balance_part)},
                        {"val_auprc", series(val_auprc)},
                        {"best_epoch", best_epoch},
                        {"best_val_auprc", best_val_auprc},
                        {"best_checkpoint_id", best_checkpoint_id}};
}

namespace {

void write_le_doubles(std::string& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::uint64_t bits;
      const double v = m(r, c);
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
      }
    }
  }
}

Eigen::MatrixXd read_le_doubles(const std::string& bytes, std::size_t& offset,
                                int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      if (offset + 8 > bytes.size()) {
        throw input_error("model weights: blob shorter than declared shapes");
      }
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(bytes[offset + b]))
                << (8 * b);
      }
      offset += 8;
      double v;
      std::memcpy(&v, &bits, sizeof(v));
      m(r, c) = v;
    }
  }
  return m;
}

}  // namespace

void MonitorModel::save(const std::string& directory) const {
  std::filesystem::create_directories(directory);
  auto params = parameter_list(*const_cast<MonitorModel*>(this));
  std::string blob;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : params) {
    shapes.push_back({{"name", p.name},
                      {"rows", p.value->rows()},
                      {"cols", p.value->cols()}});
    write_le_doubles(blob, *p.value);
  }
  write_file(directory + "/weights.bin", blob);
  const nlohmann::json manifest{{"config", config.to_json()},
                                {"seed", training_seed},
                                {"vectorizer_hash", vectorizer_hash},
                                {"evaluation_mode", "deterministic"},
                                {"weight_format", "little_endian_f64"},
                                {"weights", shapes},
                                {"weights_sha256", sha256_hex(blob)},
                                {"toolkit_version", kToolkitVersion}};
  write_json_file(directory + "/manifest.json", manifest);
}

MonitorModel MonitorModel::load(const std::string& directory) {
  const nlohmann::json manifest = read_json_file(directory + "/manifest.json");
  MonitorModel m;
  m.config = MonitorConfig::from_json(manifest.at("config"));
  m.training_seed = manifest.value("seed", std::uint64_t(0));
  m.vectorizer_hash = manifest.value("vectorizer_hash", "");
  const std::string blob = read_file(directory + "/weights.bin");
  const std::string expect = manifest.value("weights_sha256", "");
  if (!expect.empty() && expect != sha256_hex(blob)) {
    throw input_error("model weights hash mismatch in " + directory);
  }
  if (m.config.backend == "fsm") {
    m.transitions.resize(m.config.alphabet_size);
  }
  std::size_t offset = 0;
  for (const auto& s : manifest.at("weights")) {
    const std::string name = s.at("name").get<std::string>();
    const int rows = s.at("rows").get<int>();
    const int cols = s.at("cols").get<int>();
    Eigen::MatrixXd value = read_le_doubles(blob, offset, rows, cols);
    if (name == "w1") m.w1 = std::move(value);
    else if (name == "w2") m.w2 = std::move(value);
    else if (name == "proj") m.proj = std::move(value);
    else if (name == "wz") m.wz = std::move(value);
    else if (name == "uz") m.uz = std::move(value);
    else if (name == "bz") m.bz = std::move(value);
    else if (name == "wr") m.wr = std::move(value);
    else if (name == "ur") m.ur = std::move(value);
    else if (name == "br") m.br = std::move(value);
    else if (name == "wh") m.wh = std::move(value);
    else if (name == "uh") m.uh = std::move(value);
    else if (name == "bh") m.bh = std::move(value);
    else if (name == "theta0") m.initial_logits = std::move(value);
    else if (name == "head_w") m.head_w = std::move(value);
    else if (name == "head_b") m.head_b = std::move(value);
    else if (name.size() > 1 && name[0] == 't') {
      const int k = std::stoi(name.substr(1));
      if (k < 0 || k >= m.config.alphabet_size) {
        throw input_error("model weights: transition index out of range");
      }
      m.transitions[k] = std::move(value);
    } else {
      throw input_error("model weights: unknown parameter " + name);
    }
  }
  if (offset != blob.size()) {
    throw input_error("model weights: blob longer than declared shapes");
  }
  return m;
}

}  // namespace prefixguard
