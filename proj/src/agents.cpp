#include "adaptlab/agents.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

#include "adaptlab/checkpoint.hpp"

namespace adaptlab {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<const ParamGraph*> bundle_graphs(const AgentBundle& b) {
  std::vector<const ParamGraph*> out{&b.f_e};
  if (b.is_sac()) out.push_back(&b.f_a);
  out.push_back(&b.f_c1);
  if (b.is_sac()) out.push_back(&b.f_c2);
  out.push_back(&b.f_i);
  out.push_back(&b.f_e_target);
  out.push_back(&b.f_c1_target);
  if (b.is_sac()) out.push_back(&b.f_c2_target);
  return out;
}

std::vector<ParamGraph*> bundle_graphs(AgentBundle& b) {
  std::vector<ParamGraph*> out;
  for (const ParamGraph* g : bundle_graphs(const_cast<const AgentBundle&>(b)))
    out.push_back(const_cast<ParamGraph*>(g));
  return out;
}

}  // namespace

std::vector<ParamTensor*> AgentBundle::live_params() {
  std::vector<ParamTensor*> out;
  auto add = [&](ParamGraph& g) {
    for (ParamTensor* p : g.param_ptrs()) out.push_back(p);
  };
  add(f_e);
  if (is_sac()) add(f_a);
  add(f_c1);
  if (is_sac()) add(f_c2);
  add(f_i);
  return out;
}

AgentBundle make_bundle(const AgentConfig& cfg, Rng& rng) {
  require(cfg.dims.obs > 0 && cfg.dims.act > 0, "make_bundle: bad dims");
  AgentBundle b;
  b.config = cfg;
  const Dims& d = cfg.dims;
  b.f_e = make_encoder(d, rng, "f_e");
  if (cfg.kind == AgentKind::sac) {
    b.f_a = make_actor(d, rng, "f_a");
    b.f_c1 = make_critic(d, rng, "f_c1");
    b.f_c2 = make_critic(d, rng, "f_c2");
  } else {
    b.f_c1 = make_critic(d, rng, "f_c1");
  }
  b.f_i = make_invdyn(d, rng, "f_i");
  // Targets carry their own tensor names, so a saved bundle has no name
  // collisions; values start as exact copies of the live nets.
  Rng shape_only(0);
  b.f_e_target = make_encoder(d, shape_only, "f_e_t");
  b.f_e_target.copy_values_from(b.f_e);
  b.f_e_target.set_trainable(false);
  b.f_c1_target = make_critic(d, shape_only, "f_c1_t");
  b.f_c1_target.copy_values_from(b.f_c1);
  b.f_c1_target.set_trainable(false);
  if (cfg.kind == AgentKind::sac) {
    b.f_c2_target = make_critic(d, shape_only, "f_c2_t");
    b.f_c2_target.copy_values_from(b.f_c2);
    b.f_c2_target.set_trainable(false);
  }
  return b;
}

SnapshotSet snapshot(const AgentBundle& b) {
  SnapshotSet s;
  s.kind = b.config.kind;
  s.dims = b.config.dims;
  Rng shape_only(0);
  s.g_e = make_encoder(s.dims, shape_only, "g_e");
  s.g_e.copy_values_from(b.f_e);
  s.g_e.set_trainable(false);
  if (b.is_sac()) {
    s.g_a = make_actor(s.dims, shape_only, "g_a");
    s.g_a.copy_values_from(b.f_a);
    s.g_a.set_trainable(false);
  }
  s.target_e = make_encoder(s.dims, shape_only, "target_e");
  s.target_e.copy_values_from(b.f_e_target);
  s.target_e.set_trainable(false);
  s.target_c = make_critic(s.dims, shape_only, "target_c");
  s.target_c.copy_values_from(b.f_c1_target);
  s.target_c.set_trainable(false);
  return s;
}

namespace {

ParamTensor meta_tensor(const std::string& name, double v) {
  ParamTensor t;
  t.name = name;
  t.shape = {1};
  t.values = MatrixXd::Constant(1, 1, v);
  t.grad = MatrixXd::Zero(1, 1);
  return t;
}

std::vector<ParamTensor> config_meta(const AgentConfig& c) {
  std::vector<ParamTensor> m;
  m.push_back(meta_tensor("meta/agent_kind", c.kind == AgentKind::sac ? 0 : 1));
  m.push_back(meta_tensor("meta/obs_dim", c.dims.obs));
  m.push_back(meta_tensor("meta/act_dim", c.dims.act));
  m.push_back(meta_tensor("meta/emb_dim", c.dims.emb));
  m.push_back(meta_tensor("meta/hidden_dim", c.dims.hidden));
  m.push_back(meta_tensor("meta/bottleneck_dim", c.dims.bottleneck));
  m.push_back(meta_tensor("meta/gamma", c.gamma));
  m.push_back(meta_tensor("meta/alpha_ent", c.alpha_ent));
  m.push_back(meta_tensor("meta/tau", c.tau));
  m.push_back(meta_tensor("meta/lr", c.lr));
  m.push_back(meta_tensor("meta/l2_coefficient", c.l2_coefficient));
  m.push_back(meta_tensor("meta/qtopt_candidates", c.qtopt_candidates));
  m.push_back(meta_tensor("meta/qtopt_refine_iters", c.qtopt_refine_iters));
  m.push_back(meta_tensor("meta/qtopt_explore_noise", c.qtopt_explore_noise));
  return m;
}

class TensorIndex {
 public:
  explicit TensorIndex(const std::vector<ParamTensor>& tensors) {
    for (const ParamTensor& t : tensors)
      require(by_name_.emplace(t.name, &t).second,
              "checkpoint: duplicate tensor " + t.name);
  }

  double scalar(const std::string& name) {
    const ParamTensor& t = find(name);
    require(t.values.size() == 1, "checkpoint: non-scalar meta " + name);
    return t.values(0, 0);
  }

  int scalar_int(const std::string& name) {
    return int(std::llround(scalar(name)));
  }

  void fill_graph(ParamGraph& g) {
    for (ParamTensor* p : g.param_ptrs()) {
      const ParamTensor& src = find(p->name);
      require(src.values.rows() == p->values.rows() &&
                  src.values.cols() == p->values.cols(),
              "checkpoint: shape mismatch for " + p->name);
      p->values = src.values;
    }
  }

  void require_all_used() const {
    for (const auto& kv : by_name_)
      require(used_.count(kv.first) != 0,
              "checkpoint: unexpected tensor " + kv.first);
  }

 private:
  const ParamTensor& find(const std::string& name) {
    auto it = by_name_.find(name);
    require(it != by_name_.end(), "checkpoint: missing tensor " + name);
    used_.insert(name);
    return *it->second;
  }

  std::map<std::string, const ParamTensor*> by_name_;
  std::set<std::string> used_;
};

}  // namespace

void save_bundle(const std::string& path, const AgentBundle& b) {
  const std::vector<ParamTensor> meta = config_meta(b.config);
  std::vector<const ParamTensor*> all;
  for (const ParamTensor& t : meta) all.push_back(&t);
  for (const ParamGraph* g : bundle_graphs(b))
    for (const ParamTensor* p : g->param_ptrs()) all.push_back(p);
  save_tensors(path, all);
}

AgentBundle load_bundle(const std::string& path) {
  const std::vector<ParamTensor> loaded = load_tensors(path);
  TensorIndex idx(loaded);
  AgentConfig c;
  const double kind = idx.scalar("meta/agent_kind");
  require(kind == 0.0 || kind == 1.0, "load_bundle: unknown agent kind");
  c.kind = kind == 0.0 ? AgentKind::sac : AgentKind::qtopt;
  c.dims.obs = idx.scalar_int("meta/obs_dim");
  c.dims.act = idx.scalar_int("meta/act_dim");
  c.dims.emb = idx.scalar_int("meta/emb_dim");
  c.dims.hidden = idx.scalar_int("meta/hidden_dim");
  c.dims.bottleneck = idx.scalar_int("meta/bottleneck_dim");
  c.gamma = idx.scalar("meta/gamma");
  c.alpha_ent = idx.scalar("meta/alpha_ent");
  c.tau = idx.scalar("meta/tau");
  c.lr = idx.scalar("meta/lr");
  c.l2_coefficient = idx.scalar("meta/l2_coefficient");
  c.qtopt_candidates = idx.scalar_int("meta/qtopt_candidates");
  c.qtopt_refine_iters = idx.scalar_int("meta/qtopt_refine_iters");
  c.qtopt_explore_noise = idx.scalar("meta/qtopt_explore_noise");
  Rng shape_only(0);
  AgentBundle b = make_bundle(c, shape_only);
  for (ParamGraph* g : bundle_graphs(b)) idx.fill_graph(*g);
  idx.require_all_used();
  return b;
}

void save_snapshot(const std::string& path, const SnapshotSet& s) {
  std::vector<ParamTensor> meta;
  meta.push_back(
      meta_tensor("meta/agent_kind", s.kind == AgentKind::sac ? 0 : 1));
  meta.push_back(meta_tensor("meta/obs_dim", s.dims.obs));
  meta.push_back(meta_tensor("meta/act_dim", s.dims.act));
  meta.push_back(meta_tensor("meta/emb_dim", s.dims.emb));
  meta.push_back(meta_tensor("meta/hidden_dim", s.dims.hidden));
  meta.push_back(meta_tensor("meta/bottleneck_dim", s.dims.bottleneck));
  std::vector<const ParamTensor*> all;
  for (const ParamTensor& t : meta) all.push_back(&t);
  std::vector<const ParamGraph*> graphs{&s.g_e, &s.target_e, &s.target_c};
  if (s.kind == AgentKind::sac) graphs.insert(graphs.begin() + 1, &s.g_a);
  for (const ParamGraph* g : graphs)
    for (const ParamTensor* p : g->param_ptrs()) all.push_back(p);
  save_tensors(path, all);
}

SnapshotSet load_snapshot(const std::string& path) {
  const std::vector<ParamTensor> loaded = load_tensors(path);
  TensorIndex idx(loaded);
  SnapshotSet s;
  const double kind = idx.scalar("meta/agent_kind");
  require(kind == 0.0 || kind == 1.0, "load_snapshot: unknown agent kind");
  s.kind = kind == 0.0 ? AgentKind::sac : AgentKind::qtopt;
  s.dims.obs = idx.scalar_int("meta/obs_dim");
  s.dims.act = idx.scalar_int("meta/act_dim");
  s.dims.emb = idx.scalar_int("meta/emb_dim");
  s.dims.hidden = idx.scalar_int("meta/hidden_dim");
  s.dims.bottleneck = idx.scalar_int("meta/bottleneck_dim");
  Rng shape_only(0);
  s.g_e = make_encoder(s.dims, shape_only, "g_e");
  if (s.kind == AgentKind::sac) s.g_a = make_actor(s.dims, shape_only, "g_a");
  s.target_e = make_encoder(s.dims, shape_only, "target_e");
  s.target_c = make_critic(s.dims, shape_only, "target_c");
  idx.fill_graph(s.g_e);
  if (s.kind == AgentKind::sac) idx.fill_graph(s.g_a);
  idx.fill_graph(s.target_e);
  idx.fill_graph(s.target_c);
  idx.require_all_used();
  s.g_e.set_trainable(false);
  if (s.kind == AgentKind::sac) s.g_a.set_trainable(false);
  s.target_e.set_trainable(false);
  s.target_c.set_trainable(false);
  return s;
}

namespace {

// inverse-dynamics MSE on precomputed embeddings; accumulates f_i grads, adds
// the obs-side input gradient into *e_grad and writes the next-obs side
double invdyn_term(AgentBundle& b, const MatrixXd& e, const MatrixXd& e_next,
                   const MatrixXd& action, bool accumulate_grads,
                   MatrixXd* e_grad, MatrixXd* e_next_grad) {
  Tape t;
  const MatrixXd pred = b.f_i.forward2(e, e_next, t);
  const LossGrad l = mse_loss(pred, action);
  if (accumulate_grads) {
    const auto parts = b.f_i.split_input_grad(b.f_i.backward(t, l.grad));
    *e_grad += parts.first;
    *e_next_grad = parts.second;
  }
  return l.value;
}

}  // namespace

double inverse_dynamics_loss(AgentBundle& b, const MatrixXd& obs,
                             const MatrixXd& action, const MatrixXd& next_obs,
                             bool accumulate_grads) {
  Tape t_e, t_en;
  const MatrixXd e = b.f_e.forward(obs, t_e);
  const MatrixXd e_next = b.f_e.forward(next_obs, t_en);
  MatrixXd ge = MatrixXd::Zero(e.rows(), e.cols());
  MatrixXd gen;
  const double v =
      invdyn_term(b, e, e_next, action, accumulate_grads, &ge, &gen);
  if (accumulate_grads) {
    b.f_e.backward(t_e, ge);
    b.f_e.backward(t_en, gen);
  }
  return v;
}

double sac_critic_loss(AgentBundle& b, const MatrixXd& obs,
                       const MatrixXd& action, const MatrixXd& y,
                       bool accumulate_grads) {
  require(b.is_sac(), "sac_critic_loss: bundle is not SAC");
  require(obs.rows() == action.rows() && obs.rows() == y.rows() &&
              y.cols() == 1,
          "sac_critic_loss: ragged batch");
  Tape t_e, t_q1, t_q2;
  const MatrixXd e = b.f_e.forward(obs, t_e);
  const LossGrad lc1 = mse_loss(b.f_c1.forward2(e, action, t_q1), y);
  const LossGrad lc2 = mse_loss(b.f_c2.forward2(e, action, t_q2), y);
  if (accumulate_grads) {
    MatrixXd e_grad =
        b.f_c1.split_input_grad(b.f_c1.backward(t_q1, lc1.grad)).first;
    e_grad += b.f_c2.split_input_grad(b.f_c2.backward(t_q2, lc2.grad)).first;
    b.f_e.backward(t_e, e_grad);
  }
  return lc1.value + lc2.value;
}

double qtopt_critic_loss(AgentBundle& b, const MatrixXd& obs,
                         const MatrixXd& action, const MatrixXd& y,
                         bool accumulate_grads) {
  require(!b.is_sac(), "qtopt_critic_loss: bundle is not QT-Opt");
  require(obs.rows() == action.rows() && obs.rows() == y.rows() &&
              y.cols() == 1,
          "qtopt_critic_loss: ragged batch");
  Tape t_e, t_q;
  const MatrixXd e = b.f_e.forward(obs, t_e);
  const LossGrad lc = mse_loss(b.f_c1.forward2(e, action, t_q), y);
  if (accumulate_grads) {
    const MatrixXd e_grad =
        b.f_c1.split_input_grad(b.f_c1.backward(t_q, lc.grad)).first;
    b.f_e.backward(t_e, e_grad);
  }
  return lc.value;
}

double sac_actor_loss(AgentBundle& b, const MatrixXd& emb, const MatrixXd& eps,
                      bool accumulate_grads) {
  require(b.is_sac(), "sac_actor_loss: bundle is not SAC");
  const int B = int(emb.rows());
  const int act = b.config.dims.act;
  require(B > 0 && eps.rows() == B && int(eps.cols()) == act,
          "sac_actor_loss: eps shape mismatch");
  Tape t_a;
  const DiagGaussian g = split_gaussian(b.f_a.forward(emb, t_a));
  const MatrixXd sigma = g.log_std.array().exp();
  const MatrixXd action =
      (g.mean + sigma.cwiseProduct(eps)).array().tanh().matrix();
  const VectorXd lp = squashed_log_prob(g, eps, action);

  Tape t_q1, t_q2;
  const MatrixXd q1 = b.f_c1.forward2(emb, action, t_q1);
  const MatrixXd q2 = b.f_c2.forward2(emb, action, t_q2);
  double loss = 0.0;
  MatrixXd m1 = MatrixXd::Zero(B, 1), m2 = MatrixXd::Zero(B, 1);
  for (int r = 0; r < B; ++r) {
    const bool first = q1(r, 0) <= q2(r, 0);
    (first ? m1 : m2)(r, 0) = 1.0;
    loss += b.config.alpha_ent * lp(r) - (first ? q1 : q2)(r, 0);
  }
  loss /= B;
  if (!accumulate_grads) return loss;

  // d(min Q)/d action through the active critic only; critic and encoder
  // parameters stay untouched by the actor objective
  const MatrixXd dq_da =
      b.f_c1.split_input_grad(b.f_c1.backward(t_q1, m1, false)).second +
      b.f_c2.split_input_grad(b.f_c2.backward(t_q2, m2, false)).second;
  const double alpha = b.config.alpha_ent;
  MatrixXd out_grad(B, 2 * act);
  for (int r = 0; r < B; ++r) {
    for (int d = 0; d < act; ++d) {
      const double a = action(r, d);
      const double one_m = 1.0 - a * a;
      const double dmu =
          alpha * 2.0 * a * one_m / (one_m + kSquashEps) - dq_da(r, d) * one_m;
      out_grad(r, d) = dmu / B;
      out_grad(r, act + d) = (-alpha + sigma(r, d) * eps(r, d) * dmu) / B;
    }
  }
  b.f_a.backward(t_a, out_grad);  // input gradient dropped: encoder detached
  return loss;
}

std::vector<ParamTensor*> constrained_weights(AgentBundle& b) {
  ParamGraph& g = b.is_sac() ? b.f_a : b.f_c1;
  require(g.bottleneck_act >= 0, "constrained_weights: no bottleneck");
  std::vector<ParamTensor*> out;
  const auto& layers = g.layers();
  for (int li = g.bottleneck_act; li < int(layers.size()); ++li)
    if (layers[li].kind == LayerKind::dense) out.push_back(&g.param(layers[li].w));
  return out;
}

LossReport sac_train_step(AgentBundle& b, const RewardedBatch& batch, Adam& opt,
                          Rng& rng) {
  require(b.is_sac(), "sac_train_step: bundle is not SAC");
  const AgentConfig& cfg = b.config;
  const int B = int(batch.obs.rows());
  require(B > 0 && batch.action.rows() == B && batch.next_obs.rows() == B &&
              int(batch.reward.size()) == B && int(batch.done.size()) == B,
          "sac_train_step: ragged batch");
  b.f_e.zero_grads();
  b.f_a.zero_grads();
  b.f_c1.zero_grads();
  b.f_c2.zero_grads();
  b.f_i.zero_grads();

  // Bellman targets: fresh action from the live actor at the target-encoder
  // embedding, backed up through the target critics with the entropy bonus
  Tape t_et, t_pt, t_q1t, t_q2t;
  const MatrixXd e_next_t = b.f_e_target.forward(batch.next_obs, t_et);
  const DiagGaussian pol_next = split_gaussian(b.f_a.forward(e_next_t, t_pt));
  const SquashedSample a_next = sample_squashed(pol_next, rng);
  const MatrixXd q1t = b.f_c1_target.forward2(e_next_t, a_next.action, t_q1t);
  const MatrixXd q2t = b.f_c2_target.forward2(e_next_t, a_next.action, t_q2t);
  MatrixXd y(B, 1);
  for (int r = 0; r < B; ++r)
    y(r, 0) = batch.reward(r) +
              cfg.gamma * (1.0 - batch.done(r)) *
                  (std::min(q1t(r, 0), q2t(r, 0)) -
                   cfg.alpha_ent * a_next.log_prob(r));

  // twin critic regression; gradients flow through both critics into the
  // encoder
  Tape t_e, t_q1, t_q2;
  const MatrixXd e = b.f_e.forward(batch.obs, t_e);
  const LossGrad lc1 = mse_loss(b.f_c1.forward2(e, batch.action, t_q1), y);
  const LossGrad lc2 = mse_loss(b.f_c2.forward2(e, batch.action, t_q2), y);
  MatrixXd e_grad =
      b.f_c1.split_input_grad(b.f_c1.backward(t_q1, lc1.grad)).first;
  e_grad += b.f_c2.split_input_grad(b.f_c2.backward(t_q2, lc2.grad)).first;

  MatrixXd eps(B, cfg.dims.act);
  for (int r = 0; r < B; ++r)
    for (int d = 0; d < cfg.dims.act; ++d) eps(r, d) = rng.gauss();
  const double loss_actor = sac_actor_loss(b, e, eps, true);

  Tape t_en;
  const MatrixXd e_next = b.f_e.forward(batch.next_obs, t_en);
  MatrixXd e_next_grad;
  const double loss_invdyn =
      invdyn_term(b, e, e_next, batch.action, true, &e_grad, &e_next_grad);
  b.f_e.backward(t_e, e_grad);
  b.f_e.backward(t_en, e_next_grad);

  double l2 = 0.0;
  if (cfg.l2_coefficient != 0.0)
    l2 = l2_penalty(constrained_weights(b), cfg.l2_coefficient);

  opt.step();
  b.f_e_target.polyak_from(b.f_e, cfg.tau);
  b.f_c1_target.polyak_from(b.f_c1, cfg.tau);
  b.f_c2_target.polyak_from(b.f_c2, cfg.tau);

  LossReport rep;
  rep.loss_actor = loss_actor + l2;
  rep.loss_critic = lc1.value + lc2.value;
  rep.loss_invdyn = loss_invdyn;
  return rep;
}

LossReport qtopt_train_step(AgentBundle& b, const RewardedBatch& batch,
                            Adam& opt, Rng& rng) {
  require(!b.is_sac(), "qtopt_train_step: bundle is not QT-Opt");
  const AgentConfig& cfg = b.config;
  const int B = int(batch.obs.rows());
  require(B > 0 && batch.action.rows() == B && batch.next_obs.rows() == B &&
              int(batch.reward.size()) == B && int(batch.done.size()) == B,
          "qtopt_train_step: ragged batch");
  b.f_e.zero_grads();
  b.f_c1.zero_grads();
  b.f_i.zero_grads();

  // Bellman targets: shooting argmax under the target critic at the
  // target-encoder embedding
  Tape t_et, t_qt;
  const MatrixXd e_next_t = b.f_e_target.forward(batch.next_obs, t_et);
  const MatrixXd a_star =
      qtopt_maximise(b.f_c1_target, e_next_t, cfg.dims.act,
                     cfg.qtopt_candidates, cfg.qtopt_refine_iters, rng);
  const MatrixXd qt = b.f_c1_target.forward2(e_next_t, a_star, t_qt);
  MatrixXd y(B, 1);
  for (int r = 0; r < B; ++r)
    y(r, 0) =
        batch.reward(r) + cfg.gamma * (1.0 - batch.done(r)) * qt(r, 0);

  Tape t_e, t_q;
  const MatrixXd e = b.f_e.forward(batch.obs, t_e);
  const LossGrad lc = mse_loss(b.f_c1.forward2(e, batch.action, t_q), y);
  MatrixXd e_grad =
      b.f_c1.split_input_grad(b.f_c1.backward(t_q, lc.grad)).first;

  Tape t_en;
  const MatrixXd e_next = b.f_e.forward(batch.next_obs, t_en);
  MatrixXd e_next_grad;
  const double loss_invdyn =
      invdyn_term(b, e, e_next, batch.action, true, &e_grad, &e_next_grad);
  b.f_e.backward(t_e, e_grad);
  b.f_e.backward(t_en, e_next_grad);

  double l2 = 0.0;
  if (cfg.l2_coefficient != 0.0)
    l2 = l2_penalty(constrained_weights(b), cfg.l2_coefficient);

  opt.step();
  b.f_e_target.polyak_from(b.f_e, cfg.tau);
  b.f_c1_target.polyak_from(b.f_c1, cfg.tau);

  LossReport rep;
  rep.loss_critic = lc.value + l2;
  rep.loss_invdyn = loss_invdyn;
  return rep;
}

namespace {

// top-k refit shared by the single and batched maximisers; the candidate
// block and its values must belong to one embedding row
void refit_block(const MatrixXd& cand, int offset, int n_candidates, int top_k,
                 const std::function<double(int)>& value, std::vector<int>& order,
                 VectorXd& mean, VectorXd& sd) {
  order.resize(size_t(n_candidates));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                    [&](int a, int c) {
                      const double qa = value(a), qc = value(c);
                      return qa != qc ? qa > qc : a < c;
                    });
  const int act_dim = int(cand.cols());
  for (int j = 0; j < act_dim; ++j) {
    double mu = 0.0;
    for (int i = 0; i < top_k; ++i) mu += cand(offset + order[size_t(i)], j);
    mu /= top_k;
    double var = 0.0;
    for (int i = 0; i < top_k; ++i) {
      const double dv = cand(offset + order[size_t(i)], j) - mu;
      var += dv * dv;
    }
    var /= top_k;
    mean(j) = mu;
    sd(j) = std::max(std::sqrt(var), 0.01);
  }
}

}  // namespace

VectorXd maximise_action(
    const std::function<VectorXd(const MatrixXd&)>& q_values, int act_dim,
    int n_candidates, int refine_iters, Rng& rng) {
  require(act_dim >= 1 && n_candidates >= 1 && refine_iters >= 0,
          "maximise_action: bad sizes");
  const int top_k = std::max(1, n_candidates / 10);
  MatrixXd cand(n_candidates, act_dim);
  for (int i = 0; i < n_candidates; ++i)
    for (int j = 0; j < act_dim; ++j) cand(i, j) = rng.uniform(-1.0, 1.0);
  VectorXd best = VectorXd::Zero(act_dim);
  double best_q = -std::numeric_limits<double>::infinity();
  std::vector<int> order;
  VectorXd mean(act_dim), sd(act_dim);
  for (int round = 0;; ++round) {
    const VectorXd q = q_values(cand);
    require(int(q.size()) == n_candidates,
            "maximise_action: value count mismatch");
    for (int i = 0; i < n_candidates; ++i)
      if (q(i) > best_q) {  // strict: the first maximum wins ties
        best_q = q(i);
        best = cand.row(i).transpose();
      }
    if (round == refine_iters) break;
    refit_block(cand, 0, n_candidates, top_k, [&](int i) { return q(i); },
                order, mean, sd);
    for (int i = 0; i < n_candidates; ++i)
      for (int j = 0; j < act_dim; ++j)
        cand(i, j) = std::clamp(mean(j) + sd(j) * rng.gauss(), -1.0, 1.0);
  }
  return best;
}

MatrixXd qtopt_maximise(const ParamGraph& critic, const MatrixXd& emb,
                        int act_dim, int n_candidates, int refine_iters,
                        Rng& rng) {
  const int B = int(emb.rows());
  require(B >= 1, "qtopt_maximise: empty embedding batch");
  require(act_dim >= 1 && n_candidates >= 1 && refine_iters >= 0,
          "qtopt_maximise: bad sizes");
  const int top_k = std::max(1, n_candidates / 10);
  const int n = B * n_candidates;
  MatrixXd emb_rep(n, emb.cols());
  for (int r = 0; r < B; ++r)
    emb_rep.middleRows(Eigen::Index(r) * n_candidates, n_candidates) =
        emb.row(r).replicate(n_candidates, 1);
  // draw order matches maximise_action row by row, so a one-row batch is
  // bit-identical to the single-context maximiser
  MatrixXd cand(n, act_dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < act_dim; ++j) cand(i, j) = rng.uniform(-1.0, 1.0);
  MatrixXd best = MatrixXd::Zero(B, act_dim);
  VectorXd best_q =
      VectorXd::Constant(B, -std::numeric_limits<double>::infinity());
  std::vector<int> order;
  VectorXd mean(act_dim), sd(act_dim);
  for (int round = 0;; ++round) {
    Tape t;
    const MatrixXd q = critic.forward2(emb_rep, cand, t);
    for (int r = 0; r < B; ++r) {
      const int off = r * n_candidates;
      for (int i = 0; i < n_candidates; ++i)
        if (q(off + i, 0) > best_q(r)) {
          best_q(r) = q(off + i, 0);
          best.row(r) = cand.row(off + i);
        }
    }
    if (round == refine_iters) break;
    for (int r = 0; r < B; ++r) {
      const int off = r * n_candidates;
      refit_block(cand, off, n_candidates, top_k,
                  [&](int i) { return q(off + i, 0); }, order, mean, sd);
      for (int i = 0; i < n_candidates; ++i)
        for (int j = 0; j < act_dim; ++j)
          cand(off + i, j) =
              std::clamp(mean(j) + sd(j) * rng.gauss(), -1.0, 1.0);
    }
  }
  return best;
}

Vector2d explore_action(const AgentBundle& b, const VectorXd& obs, Rng& rng) {
  require(b.config.dims.act == 2, "explore_action: actions must be 2-D");
  Tape t_e;
  const MatrixXd e = b.f_e.forward(obs.transpose(), t_e);
  if (b.is_sac()) {
    Tape t_a;
    const DiagGaussian g = split_gaussian(b.f_a.forward(e, t_a));
    const SquashedSample s = sample_squashed(g, rng);
    return Vector2d(s.action(0, 0), s.action(0, 1));
  }
  const MatrixXd a =
      qtopt_maximise(b.f_c1, e, b.config.dims.act, b.config.qtopt_candidates,
                     b.config.qtopt_refine_iters, rng);
  Vector2d out;
  for (int j = 0; j < 2; ++j)
    out(j) = std::clamp(
        a(0, j) + b.config.qtopt_explore_noise * rng.gauss(), -1.0, 1.0);
  return out;
}

MatrixXd eval_actions(const AgentBundle& b, const MatrixXd& obs, Rng& rng) {
  Tape t_e;
  const MatrixXd e = b.f_e.forward(obs, t_e);
  if (b.is_sac()) {
    Tape t_a;
    const DiagGaussian g = split_gaussian(b.f_a.forward(e, t_a));
    return g.mean.array().tanh();
  }
  return qtopt_maximise(b.f_c1, e, b.config.dims.act,
                        b.config.qtopt_candidates, b.config.qtopt_refine_iters,
                        rng);
}

Vector2d eval_action(const AgentBundle& b, const VectorXd& obs, Rng& rng) {
  require(b.config.dims.act == 2, "eval_action: actions must be 2-D");
  const MatrixXd a = eval_actions(b, obs.transpose(), rng);
  return Vector2d(a(0, 0), a(0, 1));
}

MatrixXd embed(const AgentBundle& b, const MatrixXd& obs,
               EmbeddingLevel level) {
  Tape t_e;
  MatrixXd e = b.f_e.forward(obs, t_e);
  if (level == EmbeddingLevel::encoder) return e;
  if (b.is_sac()) {
    Tape t;
    b.f_a.forward(e, t);
    return t.act[size_t(b.f_a.bottleneck_act)];
  }
  // reward-free probe of the critic trunk: the zero action is arbitrary but
  // fixed, so distances in this space are comparable across steps
  Tape t;
  b.f_c1.forward2(e, MatrixXd::Zero(e.rows(), b.config.dims.act), t);
  return t.act[size_t(b.f_c1.bottleneck_act)];
}

MatrixXd embed_snapshot(const SnapshotSet& s, const MatrixXd& obs) {
  Tape t;
  return s.g_e.forward(obs, t);
}

DiagGaussian actor_policy(const AgentBundle& b, const MatrixXd& obs) {
  require(b.is_sac(), "actor_policy: bundle is not SAC");
  Tape t_e, t_a;
  return split_gaussian(b.f_a.forward(b.f_e.forward(obs, t_e), t_a));
}

DiagGaussian snapshot_policy(const SnapshotSet& s, const MatrixXd& obs) {
  require(s.kind == AgentKind::sac, "snapshot_policy: snapshot is not SAC");
  Tape t_e, t_a;
  return split_gaussian(s.g_a.forward(s.g_e.forward(obs, t_e), t_a));
}

namespace {

EvalResult run_episodes(
    const EnvConfig& cfg, const VideoBank* bank, int n_episodes, Rng& rng,
    const std::function<MatrixXd(const MatrixXd&, Rng&)>& act_fn) {
  require(n_episodes >= 1, "evaluate: need at least one episode");
  require(cfg.expose_reward, "evaluate: environment must expose rewards");
  Rng base(rng.next_u64());
  std::vector<PointMassEnv> envs;
  envs.reserve(size_t(n_episodes));
  for (int k = 0; k < n_episodes; ++k)
    envs.emplace_back(cfg, base.fork("episode", std::uint64_t(k)), bank);
  MatrixXd obs(n_episodes, envs[0].obs_dim());
  for (int k = 0; k < n_episodes; ++k) obs.row(k) = envs[k].reset().transpose();
  VectorXd ret = VectorXd::Zero(n_episodes);
  Rng act_rng = base.fork("actions");
  // fixed-length episodes end together, so the batch stays rectangular
  for (int t = 0; t < cfg.episode_length; ++t) {
    const MatrixXd acts = act_fn(obs, act_rng);
    for (int k = 0; k < n_episodes; ++k) {
      const StepResult sr = envs[k].step(Vector2d(acts(k, 0), acts(k, 1)));
      ret(k) += sr.reward.value();
      obs.row(k) = sr.obs.transpose();
    }
  }
  EvalResult out;
  out.mean_return = ret.mean();
  if (n_episodes > 1) {
    const double var = (ret.array() - out.mean_return).square().sum() /
                       double(n_episodes - 1);
    out.std_of_mean = std::sqrt(var / double(n_episodes));
  }
  return out;
}

}  // namespace

EvalResult evaluate_policy(const AgentBundle& b, const EnvConfig& cfg,
                           const VideoBank* bank, int n_episodes, Rng& rng) {
  require(b.config.dims.act == 2, "evaluate_policy: actions must be 2-D");
  return run_episodes(cfg, bank, n_episodes, rng,
                      [&](const MatrixXd& obs, Rng& r) {
                        return eval_actions(b, obs, r);
                      });
}

EvalResult evaluate_random_policy(const EnvConfig& cfg, const VideoBank* bank,
                                  int n_episodes, Rng& rng) {
  return run_episodes(cfg, bank, n_episodes, rng,
                      [](const MatrixXd& obs, Rng& r) {
                        MatrixXd a(obs.rows(), 2);
                        for (Eigen::Index i = 0; i < a.rows(); ++i)
                          for (Eigen::Index j = 0; j < 2; ++j)
                            a(i, j) = r.uniform(-1.0, 1.0);
                        return a;
                      });
}

}  // namespace adaptlab
