#include "prefixguard/autodiff.hpp"

#include <cmath>

namespace prefixguard::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::runtime_error(std::string(op) + ": shape mismatch");
  }
}

// Nodes may reallocate as the tape grows; closures capture ids only and
// resolve storage through the tape at backward time.

}  // namespace

const Eigen::MatrixXd& Var::value() const { return tape_->value_of(id_); }
const Eigen::MatrixXd& Var::grad() const { return tape_->grad_of(id_); }

Var Tape::leaf(Eigen::MatrixXd value) {
  Node n;
  n.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make(Eigen::MatrixXd value, std::function<void()> backward) {
  Node n;
  n.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& scalar_root) {
  const int root = scalar_root.id();
  if (nodes_[root].value.size() != 1) {
    throw std::runtime_error("backward: root must be scalar");
  }
  nodes_[root].grad(0, 0) = 1.0;
  for (int id = root; id >= 0; --id) {
    if (nodes_[id].backward) nodes_[id].backward();
  }
}

Var add(Var a, Var b) {
  Tape* t = a.tape();
  check_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value() + b.value(), [t, ia, ib, out]() {
    t->grad_of(ia) += t->grad_of(out);
    t->grad_of(ib) += t->grad_of(out);
  });
}

Var sub(Var a, Var b) {
  Tape* t = a.tape();
  check_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value() - b.value(), [t, ia, ib, out]() {
    t->grad_of(ia) += t->grad_of(out);
    t->grad_of(ib) -= t->grad_of(out);
  });
}

Var cwise_mul(Var a, Var b) {
  Tape* t = a.tape();
  check_same_shape(a.value(), b.value(), "cwise_mul");
  const int ia = a.id(), ib = b.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value().cwiseProduct(b.value()), [t, ia, ib, out]() {
    const auto& g = t->grad_of(out);
    t->grad_of(ia) += g.cwiseProduct(t->value_of(ib));
    t->grad_of(ib) += g.cwiseProduct(t->value_of(ia));
  });
}

Var matmul(Var a, Var b) {
  Tape* t = a.tape();
  if (a.value().cols() != b.value().rows()) {
    throw std::runtime_error("matmul: inner dimensions differ");
  }
  const int ia = a.id(), ib = b.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value() * b.value(), [t, ia, ib, out]() {
    const auto& g = t->grad_of(out);
    t->grad_of(ia).noalias() += g * t->value_of(ib).transpose();
    t->grad_of(ib).noalias() += t->value_of(ia).transpose() * g;
  });
}

Var affine(Var a, double alpha, double beta) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make((alpha * a.value()).array() + beta, [t, ia, out, alpha]() {
    t->grad_of(ia) += alpha * t->grad_of(out);
  });
}

Var add_const(Var a, const Eigen::MatrixXd& c) {
  Tape* t = a.tape();
  check_same_shape(a.value(), c, "add_const");
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value() + c, [t, ia, out]() {
    t->grad_of(ia) += t->grad_of(out);
  });
}

Var sigmoid(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y = a.value().unaryExpr(
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x)); });
  return t->make(std::move(y), [t, ia, out]() {
    const auto& y = t->value_of(out);
    t->grad_of(ia).array() +=
        t->grad_of(out).array() * y.array() * (1.0 - y.array());
  });
}

Var tanh_(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value().array().tanh(), [t, ia, out]() {
    const auto& y = t->value_of(out);
    t->grad_of(ia).array() +=
        t->grad_of(out).array() * (1.0 - y.array().square());
  });
}

Var gelu(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y = a.value().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return t->make(std::move(y), [t, ia, out]() {
    const auto& x = t->value_of(ia);
    Eigen::MatrixXd d = x.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
             v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    t->grad_of(ia).array() += t->grad_of(out).array() * d.array();
  });
}

Var softplus(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y = a.value().unaryExpr([](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
  return t->make(std::move(y), [t, ia, out]() {
    const auto& x = t->value_of(ia);
    Eigen::MatrixXd d = x.unaryExpr([](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    });
    t->grad_of(ia).array() += t->grad_of(out).array() * d.array();
  });
}

Var log_(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value().array().log(), [t, ia, out]() {
    t->grad_of(ia).array() +=
        t->grad_of(out).array() / t->value_of(ia).array();
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y = a.value().cwiseMax(lo).cwiseMin(hi);
  return t->make(std::move(y), [t, ia, out, lo, hi]() {
    const auto& x = t->value_of(ia);
    const auto& g = t->grad_of(out);
    auto& gi = t->grad_of(ia);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        if (x(r, c) > lo && x(r, c) < hi) gi(r, c) += g(r, c);
      }
    }
  });
}

Var sum(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = a.value().sum();
  return t->make(std::move(y), [t, ia, out]() {
    t->grad_of(ia).array() += t->grad_of(out)(0, 0);
  });
}

Var dot(Var a, Var b) {
  Tape* t = a.tape();
  check_same_shape(a.value(), b.value(), "dot");
  const int ia = a.id(), ib = b.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return t->make(std::move(y), [t, ia, ib, out]() {
    const double g = t->grad_of(out)(0, 0);
    t->grad_of(ia) += g * t->value_of(ib);
    t->grad_of(ib) += g * t->value_of(ia);
  });
}

Var scalar_mul(Var scalar, Var a) {
  Tape* t = a.tape();
  if (scalar.value().size() != 1) {
    throw std::runtime_error("scalar_mul: first argument must be 1x1");
  }
  const int is = scalar.id(), ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make(scalar.value()(0, 0) * a.value(), [t, is, ia, out]() {
    const auto& g = t->grad_of(out);
    t->grad_of(is)(0, 0) += g.cwiseProduct(t->value_of(ia)).sum();
    t->grad_of(ia) += t->value_of(is)(0, 0) * g;
  });
}

Var reciprocal(Var scalar) {
  Tape* t = scalar.tape();
  if (scalar.value().size() != 1) {
    throw std::runtime_error("reciprocal: argument must be 1x1");
  }
  const int is = scalar.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = 1.0 / scalar.value()(0, 0);
  return t->make(std::move(y), [t, is, out]() {
    const double inv = t->value_of(out)(0, 0);
    t->grad_of(is)(0, 0) -= t->grad_of(out)(0, 0) * inv * inv;
  });
}

Var select(Var a, int index) {
  Tape* t = a.tape();
  if (index < 0 || index >= a.value().size()) {
    throw std::runtime_error("select: index out of range");
  }
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = a.value()(index);
  return t->make(std::move(y), [t, ia, out, index]() {
    t->grad_of(ia)(index) += t->grad_of(out)(0, 0);
  });
}

Var transpose(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  return t->make(a.value().transpose(), [t, ia, out]() {
    t->grad_of(ia) += t->grad_of(out).transpose();
  });
}

Var softmax(Var a) {
  Tape* t = a.tape();
  if (a.value().cols() != 1) {
    throw std::runtime_error("softmax: expects a column vector");
  }
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  const Eigen::VectorXd x = a.value().col(0);
  Eigen::VectorXd y = (x.array() - x.maxCoeff()).exp();
  y /= y.sum();
  return t->make(y, [t, ia, out]() {
    const auto& y = t->value_of(out);
    const auto& g = t->grad_of(out);
    const double gy = g.cwiseProduct(y).sum();
    t->grad_of(ia).array() += y.array() * (g.array() - gy);
  });
}

Var entropy(Var a) {
  Tape* t = a.tape();
  const int ia = a.id();
  const int out = static_cast<int>(t->size());
  constexpr double tiny = 1e-300;
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.value().size(); ++i) {
    const double p = a.value()(i);
    if (p > tiny) h -= p * std::log(p);
  }
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = h;
  return t->make(std::move(y), [t, ia, out]() {
    const double g = t->grad_of(out)(0, 0);
    const auto& p = t->value_of(ia);
    auto& gi = t->grad_of(ia);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p(i) > tiny) gi(i) -= g * (std::log(p(i)) + 1.0);
    }
  });
}

Var linear_sparse(Var w, const SparseVec& x) {
  Tape* t = w.tape();
  const auto& W = w.value();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(W.rows(), 1);
  for (std::size_t k = 0; k < x.nnz(); ++k) {
    if (x.idx[k] >= W.cols()) {
      throw std::runtime_error("linear_sparse: feature index out of range");
    }
    y.col(0) += x.val[k] * W.col(x.idx[k]);
  }
  const int iw = w.id();
  const int out = static_cast<int>(t->size());
  // Copying the sparse vector into the closure keeps the op self-contained.
  SparseVec xc = x;
  return t->make(std::move(y), [t, iw, out, xc = std::move(xc)]() {
    const auto& g = t->grad_of(out);
    auto& gw = t->grad_of(iw);
    for (std::size_t k = 0; k < xc.nnz(); ++k) {
      gw.col(xc.idx[k]) += xc.val[k] * g.col(0);
    }
  });
}

Var gumbel_softmax(Var logits, double temperature, GumbelMode mode, Rng* rng) {
  if (!(temperature > 0.0)) {
    throw input_error("gumbel_softmax: temperature must be positive");
  }
  if (!logits.value().allFinite()) {
    throw input_error("gumbel_softmax: non-finite logits");
  }
  Var scaled = affine(logits, 1.0 / temperature, 0.0);
  if (mode == GumbelMode::kSampled) {
    if (rng == nullptr) {
      throw input_error("gumbel_softmax: sampled mode needs a generator");
    }
    Eigen::MatrixXd noise(logits.value().rows(), logits.value().cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) {
      noise(i) = rng->gumbel() / temperature;
    }
    scaled = add_const(scaled, noise);
  }
  return softmax(scaled);
}

Var gru_cell(Var input, Var hidden, const GruParams& p) {
  const auto qdim = hidden.value().rows();
  if (p.w_update.value().rows() != qdim || p.u_update.value().cols() != qdim ||
      p.w_update.value().cols() != input.value().rows()) {
    throw input_error("gru_cell: parameter shapes inconsistent with state");
  }
  Var z = sigmoid(add(add(matmul(p.w_update, input), matmul(p.u_update, hidden)),
                      p.b_update));
  Var r = sigmoid(add(add(matmul(p.w_reset, input), matmul(p.u_reset, hidden)),
                      p.b_reset));
  Var cand = tanh_(add(add(matmul(p.w_cand, input),
                           matmul(p.u_cand, cwise_mul(r, hidden))),
                       p.b_cand));
  // h' = (1 - z) .* h + z .* cand
  return add(cwise_mul(affine(z, -1.0, 1.0), hidden), cwise_mul(z, cand));
}

Var fsm_update(Var state, Var symbol_weights, const std::vector<Var>& transitions) {
  const auto qdim = state.value().cols();
  if (state.value().rows() != 1) {
    throw input_error("fsm_update: state must be a row vector");
  }
  const auto k = static_cast<int>(transitions.size());
  if (symbol_weights.value().size() != k) {
    throw input_error("fsm_update: symbol weights do not match transition count");
  }
  Var mixed;
  for (int s = 0; s < k; ++s) {
    if (transitions[s].value().rows() != qdim ||
        transitions[s].value().cols() != qdim) {
      throw input_error("fsm_update: transition matrices must be QxQ");
    }
    Var term = scalar_mul(select(symbol_weights, s), softplus(transitions[s]));
    mixed = (s == 0) ? term : add(mixed, term);
  }
  Var raw = matmul(state, mixed);
  const double mass = raw.value().sum();
  if (!(mass > 1e-12)) {
    throw std::runtime_error("fsm_update: transition mass numerically degenerate");
  }
  return scalar_mul(reciprocal(sum(raw)), raw);
}

Var bce_prefix_loss(const std::vector<Var>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw input_error("bce_prefix_loss: scores and labels must align");
  }
  constexpr double eps = 1e-7;
  Var total;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    Var s = clamp(scores[i], eps, 1.0 - eps);
    Var term = labels[i] == 1 ? log_(s) : log_(affine(s, -1.0, 1.0));
    total = (i == 0) ? term : add(total, term);
  }
  return affine(total, -1.0 / static_cast<double>(scores.size()), 0.0);
}

Var balance_loss(const std::vector<Var>& symbol_weights, double beta) {
  if (symbol_weights.empty()) {
    throw input_error("balance_loss: needs at least one assignment");
  }
  const double inv_t = 1.0 / static_cast<double>(symbol_weights.size());
  Var h_sum;
  Var alpha_sum;
  for (std::size_t i = 0; i < symbol_weights.size(); ++i) {
    Var h = entropy(symbol_weights[i]);
    h_sum = (i == 0) ? h : add(h_sum, h);
    alpha_sum = (i == 0) ? symbol_weights[i] : add(alpha_sum, symbol_weights[i]);
  }
  Var mean_h = affine(h_sum, inv_t, 0.0);
  Var marginal = affine(alpha_sum, inv_t, 0.0);
  return sub(mean_h, affine(entropy(marginal), beta, 0.0));
}

void adamw_step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad,
                AdamWState& state, const AdamWHyper& hyper,
                const std::string& param_name) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw input_error("adamw_step: gradient shape mismatch for " + param_name);
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("adamw_step: non-finite gradient for " + param_name);
  }
  if (state.first_moment.size() == 0) {
    state.first_moment = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    state.second_moment = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  }
  state.step += 1;
  state.first_moment = hyper.beta1 * state.first_moment + (1.0 - hyper.beta1) * grad;
  state.second_moment = hyper.beta2 * state.second_moment +
                        (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const Eigen::ArrayXXd m_hat = state.first_moment.array() / bc1;
  const Eigen::ArrayXXd v_hat = state.second_moment.array() / bc2;
  param.array() -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
  param.array() -= hyper.learning_rate * hyper.weight_decay * param.array();
}

double grad_check(const std::function<Var(Tape&, Var)>& f,
                  const Eigen::VectorXd& point, double epsilon) {
  Eigen::VectorXd analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = f(tape, x);
    tape.backward(y);
    analytic = x.grad().col(0);
  }
  double max_rel = 0.0;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    auto eval = [&](double delta) {
      Eigen::VectorXd p = point;
      p(i) += delta;
      Tape tape;
      Var x = tape.leaf(p);
      return f(tape, x).scalar();
    };
    const double fd = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
    const double denom = std::max(1e-8, std::abs(analytic(i)) + std::abs(fd));
    max_rel = std::max(max_rel, std::abs(analytic(i) - fd) / denom);
  }
  return max_rel;
}

}  // namespace prefixguard::ad
