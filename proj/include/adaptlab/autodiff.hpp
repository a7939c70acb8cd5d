#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "adaptlab/rng.hpp"

namespace adaptlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParamTensor {
  std::string name;
  std::vector<int> shape;  // semantic shape; rank-1 tensors are stored as (1, n)
  MatrixXd values;
  MatrixXd grad;
  bool trainable = true;

  int size() const { return int(values.size()); }
  void zero_grad() { grad.setZero(); }
};

enum class LayerKind { dense, relu, tanh_, layernorm, concat, gaussian_head };

struct LayerSpec {
  LayerKind kind;
  int in_dim = 0;
  int out_dim = 0;
  int w = -1, b = -1;        // param indices for dense
  int gamma = -1, beta = -1; // param indices for layernorm affine
  int split = 0;             // concat: width of the left input block
  double lo = 0.0, hi = 0.0; // gaussian_head log-std range
};

// Per-call activation cache. act[0] is the input batch, act[i+1] the output of
// layer i. Graphs themselves stay immutable during forward, so independent
// tapes can coexist (one per concurrent evaluation).
struct Tape {
  std::vector<MatrixXd> act;
  bool valid = false;
};

constexpr double kLayerNormEps = 1e-5;

// Static sequence of layers owning its parameters. Marks in
// stop_gradient_marks name activation indices; the backward sweep does not
// propagate past a marked activation, so parameters below keep bitwise-zero
// grads and a mark at index 0 zeroes the returned input gradient.
class ParamGraph {
 public:
  ParamGraph() = default;
  ParamGraph(ParamGraph&&) = default;
  ParamGraph& operator=(ParamGraph&&) = default;
  ParamGraph(const ParamGraph&) = delete;
  ParamGraph& operator=(const ParamGraph&) = delete;

  // builders (Glorot-uniform weights, zero biases, unit layernorm gain)
  void add_dense(int in, int out, Rng& rng, const std::string& name);
  void add_relu();
  void add_tanh();
  void add_layernorm(const std::string& name);
  void add_concat(int left, int right);
  void add_gaussian_head(int action_dim, double log_std_lo, double log_std_hi);

  int in_dim() const;
  int out_dim() const;
  int n_layers() const { return int(layers_.size()); }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  MatrixXd forward(const MatrixXd& x, Tape& tape) const;
  // concat-first graphs; the tape stores the joined input at act[0]
  MatrixXd forward2(const MatrixXd& x1, const MatrixXd& x2, Tape& tape) const;
  // evaluates the sub-network from layer index `start_layer` on; the partial
  // tape it fills cannot be used with backward
  MatrixXd forward_from(int start_layer, const MatrixXd& x, Tape& tape) const;

  // Returns dLoss/dInput; accumulates into param grads when
  // accumulate_params is set. May be called repeatedly on one tape.
  MatrixXd backward(const Tape& tape, const MatrixXd& output_grad,
                    bool accumulate_params = true) const;
  // splits an input gradient of a concat-first graph into its two blocks
  std::pair<MatrixXd, MatrixXd> split_input_grad(const MatrixXd& gin) const;

  void zero_grads();
  std::vector<ParamTensor*> param_ptrs();
  std::vector<const ParamTensor*> param_ptrs() const;
  ParamTensor& param(int i) { return *params_[i]; }
  const ParamTensor& param(int i) const { return *params_[i]; }
  int n_params() const { return int(params_.size()); }
  void set_trainable(bool t);

  ParamGraph clone() const;
  // values <- (1 - tau) * values + tau * src.values
  void polyak_from(const ParamGraph& src, double tau);
  void copy_values_from(const ParamGraph& src);

  std::set<int> stop_gradient_marks;
  int bottleneck_act = -1;  // activation index of the tanh bottleneck, if any

 private:
  int add_param(const std::string& name, std::vector<int> shape, MatrixXd v);
  std::vector<LayerSpec> layers_;
  std::vector<std::unique_ptr<ParamTensor>> params_;
};

struct LossGrad {
  double value = 0.0;
  MatrixXd grad;  // dLoss/dPred
};

// mean over all elements of (pred - target)^2
LossGrad mse_loss(const MatrixXd& pred, const MatrixXd& target);

// coefficient * sum of squared Frobenius norms; adds 2 * coefficient * W to
// each tensor's grad
double l2_penalty(const std::vector<ParamTensor*>& weights, double coefficient);

class Adam {
 public:
  Adam(std::vector<ParamTensor*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  // one update from current grads; throws on non-finite gradients
  void step();
  std::int64_t t() const { return t_; }
  double lr() const { return lr_; }

 private:
  std::vector<ParamTensor*> params_;
  std::vector<MatrixXd> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// eval(true) must return the loss after filling parameter grads from a fresh
// zero_grads state; eval(false) must return the loss only. Central
// differences with step h; returns max over trainable scalars of
// |analytic - numeric| / (|numeric| + 1e-8). Scalars where both analytic and
// numeric magnitudes fall below skip_below are excluded: below roughly
// loss_scale * 1e-10 central differences carry only truncation noise, so no
// implementation could pass there.
double fd_check(const std::vector<ParamTensor*>& params,
                const std::function<double(bool)>& eval, double h = 1e-5,
                double skip_below = 0.0);

using GraphLossFn = std::function<LossGrad(const MatrixXd&)>;

// finite-difference verification of one graph under a scalar loss on its output
double grad_check(ParamGraph& graph, const MatrixXd& batch,
                  const GraphLossFn& loss_fn, double h = 1e-5,
                  double skip_below = 0.0);

}  // namespace adaptlab
