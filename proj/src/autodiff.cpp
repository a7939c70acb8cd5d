#include "adaptlab/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace adaptlab {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

}  // namespace

int ParamGraph::add_param(const std::string& name, std::vector<int> shape,
                          MatrixXd v) {
  auto p = std::make_unique<ParamTensor>();
  p->name = name;
  p->shape = std::move(shape);
  p->grad = MatrixXd::Zero(v.rows(), v.cols());
  p->values = std::move(v);
  params_.push_back(std::move(p));
  return int(params_.size()) - 1;
}

void ParamGraph::add_dense(int in, int out, Rng& rng, const std::string& name) {
  require(in > 0 && out > 0, "dense: dims must be positive");
  const double limit = std::sqrt(6.0 / double(in + out));
  MatrixXd w(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-limit, limit);
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in_dim = in;
  l.out_dim = out;
  l.w = add_param(name + "/W", {out, in}, std::move(w));
  l.b = add_param(name + "/b", {out}, MatrixXd::Zero(1, out));
  layers_.push_back(l);
}

void ParamGraph::add_relu() {
  require(!layers_.empty(), "relu: needs a preceding layer");
  int d = layers_.back().out_dim;
  layers_.push_back({LayerKind::relu, d, d});
}

void ParamGraph::add_tanh() {
  require(!layers_.empty(), "tanh: needs a preceding layer");
  int d = layers_.back().out_dim;
  layers_.push_back({LayerKind::tanh_, d, d});
}

void ParamGraph::add_layernorm(const std::string& name) {
  require(!layers_.empty(), "layernorm: needs a preceding layer");
  int d = layers_.back().out_dim;
  LayerSpec l;
  l.kind = LayerKind::layernorm;
  l.in_dim = d;
  l.out_dim = d;
  l.gamma = add_param(name + "/gamma", {d}, MatrixXd::Ones(1, d));
  l.beta = add_param(name + "/beta", {d}, MatrixXd::Zero(1, d));
  layers_.push_back(l);
}

void ParamGraph::add_concat(int left, int right) {
  require(layers_.empty(), "concat: must be the first layer");
  LayerSpec l;
  l.kind = LayerKind::concat;
  l.in_dim = left + right;
  l.out_dim = left + right;
  l.split = left;
  layers_.push_back(l);
}

void ParamGraph::add_gaussian_head(int action_dim, double log_std_lo,
                                   double log_std_hi) {
  require(!layers_.empty() && layers_.back().out_dim == 2 * action_dim,
          "gaussian_head: preceding layer must emit 2 * action_dim");
  require(log_std_lo < log_std_hi, "gaussian_head: lo must be below hi");
  LayerSpec l;
  l.kind = LayerKind::gaussian_head;
  l.in_dim = 2 * action_dim;
  l.out_dim = 2 * action_dim;
  l.lo = log_std_lo;
  l.hi = log_std_hi;
  layers_.push_back(l);
}

int ParamGraph::in_dim() const {
  require(!layers_.empty(), "empty graph");
  return layers_.front().in_dim;
}

int ParamGraph::out_dim() const {
  require(!layers_.empty(), "empty graph");
  return layers_.back().out_dim;
}

MatrixXd ParamGraph::forward(const MatrixXd& x, Tape& tape) const {
  return forward_from(0, x, tape);
}

MatrixXd ParamGraph::forward_from(int start_layer, const MatrixXd& x,
                                  Tape& tape) const {
  require(start_layer >= 0 && start_layer < int(layers_.size()),
          "forward_from: start layer out of range");
  require(int(x.cols()) == layers_[size_t(start_layer)].in_dim,
          "forward_from: batch has " + std::to_string(x.cols()) +
              " columns, layer expects " +
              std::to_string(layers_[size_t(start_layer)].in_dim));
  tape.act.assign(1, x);
  tape.act.reserve(layers_.size() - size_t(start_layer) + 1);
  for (size_t li = size_t(start_layer); li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    const MatrixXd& in = tape.act.back();
    MatrixXd out;
    switch (l.kind) {
      case LayerKind::dense: {
        out.noalias() = in * params_[l.w]->values.transpose();
        out.rowwise() += params_[l.b]->values.row(0);
        break;
      }
      case LayerKind::relu:
        out = in.cwiseMax(0.0);
        break;
      case LayerKind::tanh_:
        out = in.array().tanh();
        break;
      case LayerKind::layernorm: {
        const auto& gamma = params_[l.gamma]->values;
        const auto& beta = params_[l.beta]->values;
        out.resize(in.rows(), in.cols());
        for (int r = 0; r < in.rows(); ++r) {
          double m = in.row(r).mean();
          double var = (in.row(r).array() - m).square().mean();
          double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          out.row(r) = ((in.row(r).array() - m) * inv) * gamma.row(0).array() +
                       beta.row(0).array();
        }
        break;
      }
      case LayerKind::concat:
        out = in;
        break;
      case LayerKind::gaussian_head: {
        const int d = l.out_dim / 2;
        out.resize(in.rows(), in.cols());
        out.leftCols(d) = in.leftCols(d);
        out.rightCols(d) =
            l.lo + (l.hi - l.lo) * 0.5 * (in.rightCols(d).array().tanh() + 1.0);
        break;
      }
    }
    tape.act.push_back(std::move(out));
  }
  tape.valid = true;
  return tape.act.back();
}

MatrixXd ParamGraph::forward2(const MatrixXd& x1, const MatrixXd& x2,
                              Tape& tape) const {
  require(!layers_.empty() && layers_.front().kind == LayerKind::concat,
          "forward2: graph must start with a concat layer");
  require(x1.rows() == x2.rows(), "forward2: batch sizes differ");
  require(int(x1.cols()) == layers_.front().split &&
              int(x1.cols() + x2.cols()) == layers_.front().in_dim,
          "forward2: block widths do not match the concat layer");
  MatrixXd joined(x1.rows(), x1.cols() + x2.cols());
  joined << x1, x2;
  return forward(joined, tape);
}

MatrixXd ParamGraph::backward(const Tape& tape, const MatrixXd& output_grad,
                              bool accumulate_params) const {
  require(tape.valid && tape.act.size() == layers_.size() + 1,
          "backward: no matching forward on this tape");
  require(output_grad.rows() == tape.act.back().rows() &&
              output_grad.cols() == tape.act.back().cols(),
          "backward: output_grad shape mismatch");
  MatrixXd g = output_grad;
  for (int i = int(layers_.size()) - 1; i >= 0; --i) {
    if (stop_gradient_marks.count(i + 1)) {
      // activation i+1 is detached from everything below it
      return MatrixXd::Zero(tape.act[0].rows(), tape.act[0].cols());
    }
    const LayerSpec& l = layers_[i];
    const MatrixXd& in = tape.act[i];
    const MatrixXd& out = tape.act[i + 1];
    switch (l.kind) {
      case LayerKind::dense: {
        if (accumulate_params && params_[l.w]->trainable) {
          params_[l.w]->grad.noalias() += g.transpose() * in;
          params_[l.b]->grad.row(0) += g.colwise().sum();
        }
        g = MatrixXd(g * params_[l.w]->values);
        break;
      }
      case LayerKind::relu:
        g = (out.array() > 0.0).select(g, 0.0);
        break;
      case LayerKind::tanh_:
        g = g.array() * (1.0 - out.array().square());
        break;
      case LayerKind::layernorm: {
        const auto& gamma = params_[l.gamma]->values;
        MatrixXd dx(in.rows(), in.cols());
        MatrixXd dgamma_acc = MatrixXd::Zero(1, in.cols());
        for (int r = 0; r < in.rows(); ++r) {
          double m = in.row(r).mean();
          double var = (in.row(r).array() - m).square().mean();
          double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          Eigen::ArrayXd xhat = (in.row(r).array() - m) * inv;
          Eigen::ArrayXd dxhat =
              g.row(r).transpose().array() * gamma.row(0).transpose().array();
          dgamma_acc.row(0).array() +=
              (g.row(r).transpose().array() * xhat).transpose();
          double mean_dxhat = dxhat.mean();
          double mean_dxhat_xhat = (dxhat * xhat).mean();
          dx.row(r) =
              (inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)).transpose();
        }
        if (accumulate_params && params_[l.gamma]->trainable) {
          params_[l.gamma]->grad += dgamma_acc;
          params_[l.beta]->grad.row(0) += g.colwise().sum();
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::concat:
        break;  // identity
      case LayerKind::gaussian_head: {
        const int d = l.out_dim / 2;
        MatrixXd din(in.rows(), in.cols());
        din.leftCols(d) = g.leftCols(d);
        din.rightCols(d) =
            g.rightCols(d).array() * (l.hi - l.lo) * 0.5 *
            (1.0 - in.rightCols(d).array().tanh().square());
        g = std::move(din);
        break;
      }
    }
  }
  if (stop_gradient_marks.count(0))
    return MatrixXd::Zero(tape.act[0].rows(), tape.act[0].cols());
  return g;
}

std::pair<MatrixXd, MatrixXd> ParamGraph::split_input_grad(
    const MatrixXd& gin) const {
  require(!layers_.empty() && layers_.front().kind == LayerKind::concat,
          "split_input_grad: not a concat-first graph");
  int left = layers_.front().split;
  return {gin.leftCols(left), gin.rightCols(gin.cols() - left)};
}

void ParamGraph::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<ParamTensor*> ParamGraph::param_ptrs() {
  std::vector<ParamTensor*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const ParamTensor*> ParamGraph::param_ptrs() const {
  std::vector<const ParamTensor*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamGraph::set_trainable(bool t) {
  for (auto& p : params_) p->trainable = t;
}

ParamGraph ParamGraph::clone() const {
  ParamGraph g;
  g.layers_ = layers_;
  g.stop_gradient_marks = stop_gradient_marks;
  g.bottleneck_act = bottleneck_act;
  for (const auto& p : params_) {
    auto q = std::make_unique<ParamTensor>(*p);
    g.params_.push_back(std::move(q));
  }
  return g;
}

void ParamGraph::polyak_from(const ParamGraph& src, double tau) {
  require(params_.size() == src.params_.size(),
          "polyak_from: parameter count mismatch");
  for (size_t i = 0; i < params_.size(); ++i) {
    require(params_[i]->values.rows() == src.params_[i]->values.rows() &&
                params_[i]->values.cols() == src.params_[i]->values.cols(),
            "polyak_from: shape mismatch at " + params_[i]->name);
    params_[i]->values =
        (1.0 - tau) * params_[i]->values + tau * src.params_[i]->values;
  }
}

void ParamGraph::copy_values_from(const ParamGraph& src) {
  require(params_.size() == src.params_.size(),
          "copy_values_from: parameter count mismatch");
  for (size_t i = 0; i < params_.size(); ++i)
    params_[i]->values = src.params_[i]->values;
}

LossGrad mse_loss(const MatrixXd& pred, const MatrixXd& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          "mse_loss: shape mismatch");
  MatrixXd diff = pred - target;
  double n = double(diff.size());
  LossGrad out;
  out.value = diff.squaredNorm() / n;
  out.grad = (2.0 / n) * diff;
  return out;
}

double l2_penalty(const std::vector<ParamTensor*>& weights,
                  double coefficient) {
  require(coefficient >= 0.0, "l2_penalty: coefficient must be >= 0");
  double loss = 0.0;
  for (ParamTensor* w : weights) {
    loss += coefficient * w->values.squaredNorm();
    if (coefficient != 0.0) w->grad += 2.0 * coefficient * w->values;
  }
  return loss;
}

Adam::Adam(std::vector<ParamTensor*> params, double lr, double beta1,
           double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (ParamTensor* p : params_) {
    m_.push_back(MatrixXd::Zero(p->values.rows(), p->values.cols()));
    v_.push_back(MatrixXd::Zero(p->values.rows(), p->values.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ParamTensor* p = params_[i];
    if (!p->trainable) continue;
    if (!p->grad.allFinite())
      throw std::runtime_error("adam: non-finite gradient in " + p->name +
                               " at step " + std::to_string(t_));
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->values.array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

double fd_check(const std::vector<ParamTensor*>& params,
                const std::function<double(bool)>& eval, double h,
                double skip_below) {
  eval(true);
  std::vector<MatrixXd> analytic;
  analytic.reserve(params.size());
  for (ParamTensor* p : params) analytic.push_back(p->grad);
  double max_rel = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    ParamTensor* p = params[i];
    if (!p->trainable) continue;
    for (int k = 0; k < p->size(); ++k) {
      double* v = p->values.data() + k;
      const double saved = *v;
      *v = saved + h;
      double up = eval(false);
      *v = saved - h;
      double down = eval(false);
      *v = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[i].data()[k];
      if (std::abs(a) < skip_below && std::abs(numeric) < skip_below) continue;
      double rel = std::abs(a - numeric) / (std::abs(numeric) + 1e-8);
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

double grad_check(ParamGraph& graph, const MatrixXd& batch,
                  const GraphLossFn& loss_fn, double h, double skip_below) {
  auto eval = [&](bool with_grads) {
    Tape tape;
    MatrixXd out = graph.forward(batch, tape);
    LossGrad lg = loss_fn(out);
    if (with_grads) {
      graph.zero_grads();
      graph.backward(tape, lg.grad);
    }
    return lg.value;
  };
  return fd_check(graph.param_ptrs(), eval, h, skip_below);
}

}  // namespace adaptlab
