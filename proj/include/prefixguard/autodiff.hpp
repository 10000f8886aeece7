#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prefixguard/common.hpp"
#include "prefixguard/encoder.hpp"

namespace prefixguard::ad {

class Tape;

// Handle to a node on the tape. Values are dense double matrices; scalars
// are 1x1. Copies are cheap; the tape owns all storage.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Eigen::MatrixXd& value() const;
  const Eigen::MatrixXd& grad() const;
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Append-only computation tape. Nodes are created in topological order;
// backward() walks them in reverse, accumulating into input gradients.
// One backward pass per tape.
class Tape {
 public:
  Var leaf(Eigen::MatrixXd value);
  Var make(Eigen::MatrixXd value, std::function<void()> backward);

  void backward(const Var& scalar_root);

  Eigen::MatrixXd& value_of(int id) { return nodes_[id].value; }
  Eigen::MatrixXd& grad_of(int id) { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear-algebra primitives.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cwise_mul(Var a, Var b);
Var matmul(Var a, Var b);
// alpha * a + beta, elementwise with scalar constants.
Var affine(Var a, double alpha, double beta);
Var add_const(Var a, const Eigen::MatrixXd& c);
Var sigmoid(Var a);
Var tanh_(Var a);
Var gelu(Var a);
Var softplus(Var a);
Var log_(Var a);
Var clamp(Var a, double lo, double hi);
Var sum(Var a);
Var dot(Var a, Var b);
// Scalar (1x1) times matrix.
Var scalar_mul(Var scalar, Var a);
// Multiplicative inverse of a scalar.
Var reciprocal(Var scalar);
// Single coefficient as a 1x1 node (column-major offset for matrices).
Var select(Var a, int index);
Var transpose(Var a);
// Column-vector softmax.
Var softmax(Var a);
// Shannon entropy -sum x ln x of a (nonnegative) vector, with 0 ln 0 = 0.
Var entropy(Var a);
// W * x for sparse x with constant entries; gradient flows to W only.
Var linear_sparse(Var w, const SparseVec& x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Temperature-scaled softmax over logits, optionally perturbed by Gumbel
// noise drawn from `rng` (training path). The deterministic mode is the
// evaluation path. Rejects non-finite logits.
enum class GumbelMode { kSampled, kDeterministic };
Var gumbel_softmax(Var logits, double temperature, GumbelMode mode, Rng* rng);

struct GruParams {
  Var w_update, u_update, b_update;
  Var w_reset, u_reset, b_reset;
  Var w_cand, u_cand, b_cand;
};

// Update/reset-gate GRU cell:
//   z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br)
//   cand = tanh(Wh x + Uh (r .* h) + bh), h' = (1-z) .* h + z .* cand
Var gru_cell(Var input, Var hidden, const GruParams& params);

// Soft finite-state update: row-state q (1xQ) times the softplus-mixed
// transition sum_k alpha_k softplus(T_k), renormalized to the simplex.
// Throws on l1 mass below 1e-12.
Var fsm_update(Var state, Var symbol_weights, const std::vector<Var>& transitions);

// Mean binary cross-entropy over one trajectory's prefix scores, each a
// 1x1 node; scores clamped to [1e-7, 1 - 1e-7].
Var bce_prefix_loss(const std::vector<Var>& scores, const std::vector<int>& labels);

// E_t[H(alpha_t)] - beta * H(E_t[alpha_t]).
Var balance_loss(const std::vector<Var>& symbol_weights, double beta);

struct AdamWHyper {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamWState {
  Eigen::MatrixXd first_moment;
  Eigen::MatrixXd second_moment;
  std::int64_t step = 0;
};

// Decoupled weight decay: the decay term scales the parameter directly and
// never enters the moment accumulators.
void adamw_step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad,
                AdamWState& state, const AdamWHyper& hyper,
                const std::string& param_name);

// Central finite differences against the tape gradient; returns the
// maximum relative error max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
// `f` must build a scalar from the supplied leaf.
double grad_check(const std::function<Var(Tape&, Var)>& f,
                  const Eigen::VectorXd& point, double epsilon = 1e-5);

}  // namespace prefixguard::ad
