#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "adaptlab/agents.hpp"

using namespace adaptlab;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p) : path(p) {}
  ~TempFile() { std::remove(path.c_str()); }
};

MatrixXd random_matrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.gauss();
  return m;
}

MatrixXd uniform_matrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

AgentConfig small_cfg(AgentKind kind) {
  AgentConfig c;
  c.kind = kind;
  c.dims = Dims{.obs = 6, .act = 2, .emb = 8, .hidden = 16, .bottleneck = 6};
  return c;
}

RewardedBatch random_rewarded_batch(int n, const Dims& d, Rng& rng) {
  RewardedBatch b;
  b.obs = random_matrix(n, d.obs, rng);
  b.action = uniform_matrix(n, d.act, rng);
  b.next_obs = random_matrix(n, d.obs, rng);
  b.reward = VectorXd::Zero(n);
  b.done = VectorXd::Zero(n);
  return b;
}

bool same_values(const ParamGraph& a, const ParamGraph& b) {
  const auto pa = a.param_ptrs();
  const auto pb = b.param_ptrs();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->values.rows() != pb[i]->values.rows() ||
        pa[i]->values.cols() != pb[i]->values.cols())
      return false;
    if (!(pa[i]->values.array() == pb[i]->values.array()).all()) return false;
  }
  return true;
}

std::vector<MatrixXd> values_of(const ParamGraph& g) {
  std::vector<MatrixXd> out;
  for (const ParamTensor* p : g.param_ptrs()) out.push_back(p->values);
  return out;
}

bool matches_values(const ParamGraph& g, const std::vector<MatrixXd>& vals) {
  const auto ps = g.param_ptrs();
  if (ps.size() != vals.size()) return false;
  for (size_t i = 0; i < ps.size(); ++i)
    if (!(ps[i]->values.array() == vals[i].array()).all()) return false;
  return true;
}

double total_grad_norm(const ParamGraph& g) {
  double s = 0.0;
  for (const ParamTensor* p : g.param_ptrs()) s += p->grad.norm();
  return s;
}

void zero_all_grads(AgentBundle& b) {
  b.f_e.zero_grads();
  b.f_a.zero_grads();
  b.f_c1.zero_grads();
  b.f_c2.zero_grads();
  b.f_i.zero_grads();
}

ParamTensor* find_param(ParamGraph& g, const std::string& name) {
  for (ParamTensor* p : g.param_ptrs())
    if (p->name == name) return p;
  return nullptr;
}

void shift_values(ParamGraph& g, double delta) {
  for (ParamTensor* p : g.param_ptrs()) p->values.array() += delta;
}

}  // namespace

TEST_CASE("replay buffer keeps a fifo window and samples without replacement") {
  CHECK_THROWS(ReplayBuffer<RewardFreeTransition>(0));
  ReplayBuffer<RewardFreeTransition> buf(3);
  CHECK(buf.size() == 0);
  CHECK_THROWS(buf.newest());
  for (int id = 0; id < 5; ++id) {
    RewardFreeTransition t;
    t.obs = VectorXd::Constant(1, double(id));
    t.action = VectorXd::Zero(2);
    t.next_obs = VectorXd::Constant(1, double(id) + 0.5);
    buf.push(t);
    CHECK(buf.newest().obs(0) == double(id));
  }
  CHECK(buf.size() == 3);
  std::set<double> held;
  for (int i = 0; i < buf.size(); ++i) held.insert(buf.at(i).obs(0));
  CHECK(held == std::set<double>{2.0, 3.0, 4.0});

  Rng rng(5);
  CHECK_THROWS(buf.sample(0, rng));
  CHECK_THROWS(buf.sample(4, rng));
  // a full-size batch is a permutation: every item exactly once
  const auto batch = buf.sample(3, rng);
  std::set<double> seen;
  for (const auto* t : batch) seen.insert(t->obs(0));
  CHECK(seen == held);

  const RewardFreeBatch rb = to_batch(batch);
  CHECK(rb.obs.rows() == 3);
  CHECK(rb.obs.cols() == 1);
  CHECK(rb.action.cols() == 2);
  CHECK(rb.next_obs(0, 0) == rb.obs(0, 0) + 0.5);

  ReplayBuffer<RewardedTransition> rbuf(4);
  RewardedTransition rt;
  rt.obs = VectorXd::Zero(2);
  rt.action = VectorXd::Zero(2);
  rt.reward = -1.5;
  rt.next_obs = VectorXd::Zero(2);
  rt.done = true;
  rbuf.push(rt);
  rt.reward = 2.0;
  rt.done = false;
  rbuf.push(rt);
  const RewardedBatch rwb = to_batch(rbuf.sample(2, rng));
  CHECK(rwb.reward.size() == 2);
  CHECK(rwb.reward.sum() == 0.5);
  CHECK(rwb.done.sum() == 1.0);
  CHECK(rwb.done.minCoeff() == 0.0);
}

TEST_CASE("replay sampling is uniform across the buffer") {
  const int n_items = 100;
  ReplayBuffer<RewardFreeTransition> buf(n_items);
  for (int id = 0; id < n_items; ++id) {
    RewardFreeTransition t;
    t.obs = VectorXd::Constant(1, double(id));
    t.action = VectorXd::Zero(1);
    t.next_obs = VectorXd::Zero(1);
    buf.push(t);
  }
  Rng rng(20240817);
  const int draws = 100000;
  std::vector<int> counts(n_items, 0);
  for (int i = 0; i < draws; ++i)
    counts[size_t(int(buf.sample(1, rng)[0]->obs(0)))]++;
  const double expected = double(draws) / n_items;
  double chi2 = 0.0;
  for (int c : counts) {
    const double dev = c - expected;
    chi2 += dev * dev / expected;
  }
  // upper 1% point of the chi-square distribution with 99 degrees of freedom
  CHECK(chi2 < 134.642);
}

TEST_CASE("bundle construction shares one encoder across distinct heads") {
  Rng rng(1);
  AgentBundle sac = make_bundle(small_cfg(AgentKind::sac), rng);
  CHECK(sac.live_params().size() == 46);
  CHECK(sac.is_sac());
  // targets start as value copies under their own tensor names
  CHECK(same_values(sac.f_e, sac.f_e_target));
  CHECK(same_values(sac.f_c1, sac.f_c1_target));
  CHECK(same_values(sac.f_c2, sac.f_c2_target));
  CHECK(sac.f_e.param(0).name.rfind("f_e/", 0) == 0);
  CHECK(sac.f_e_target.param(0).name.rfind("f_e_t/", 0) == 0);
  std::set<std::string> names;
  for (const ParamTensor* p : sac.live_params())
    CHECK(names.insert(p->name).second);

  Rng rng2(1);
  AgentBundle qt = make_bundle(small_cfg(AgentKind::qtopt), rng2);
  CHECK(qt.live_params().size() == 26);
  CHECK(qt.f_a.n_layers() == 0);
  CHECK(qt.f_c2.n_layers() == 0);

  // the encoder feeds every head: perturbing it moves all outputs
  const Dims d = sac.config.dims;
  Rng probe_rng(7);
  const MatrixXd obs = random_matrix(3, d.obs, probe_rng);
  const MatrixXd act = uniform_matrix(3, d.act, probe_rng);
  Tape te0;
  const MatrixXd e0 = sac.f_e.forward(obs, te0);
  Tape tq0, ti0, ta0;
  const MatrixXd q0 = sac.f_c1.forward2(e0, act, tq0);
  const MatrixXd i0 = sac.f_i.forward2(e0, e0, ti0);
  const MatrixXd a0 = sac.f_a.forward(e0, ta0);
  find_param(sac.f_e, "f_e/d0/W")->values.array() += 0.05;
  Tape te1;
  const MatrixXd e1 = sac.f_e.forward(obs, te1);
  Tape tq1, ti1, ta1;
  CHECK((e1 - e0).norm() > 0.0);
  CHECK((sac.f_c1.forward2(e1, act, tq1) - q0).norm() > 0.0);
  CHECK((sac.f_i.forward2(e1, e1, ti1) - i0).norm() > 0.0);
  CHECK((sac.f_a.forward(e1, ta1) - a0).norm() > 0.0);
  // heads own their parameters: an actor edit cannot move the critic
  find_param(sac.f_a, "f_a/d1/W")->values.array() += 0.5;
  Tape tq2;
  CHECK((sac.f_c1.forward2(e1, act, tq2) -
         sac.f_c1.forward2(e1, act, tq1))
            .norm() == 0.0);
}

TEST_CASE("actor outputs stay inside the squashed gaussian ranges") {
  Rng rng(2);
  AgentConfig cfg = small_cfg(AgentKind::sac);
  AgentBundle b = make_bundle(cfg, rng);
  Rng probe_rng(3);
  const MatrixXd obs = random_matrix(16, cfg.dims.obs, probe_rng);

  DiagGaussian g = actor_policy(b, obs);
  CHECK(g.mean.rows() == 16);
  CHECK(g.mean.cols() == cfg.dims.act);
  CHECK((g.log_std.array() >= log_std_lo()).all());
  CHECK((g.log_std.array() <= log_std_hi()).all());
  const Eigen::ArrayXXd var = (2.0 * g.log_std.array()).exp();
  CHECK((var >= kSigma2Min).all());
  CHECK((var <= kSigmaMax * kSigmaMax + 1e-12).all());

  Rng sample_rng(4);
  const SquashedSample s = sample_squashed(g, sample_rng);
  CHECK((s.action.array().abs() < 1.0).all());

  // deterministic: the policy is a pure function of the observation
  DiagGaussian g2 = actor_policy(b, obs);
  CHECK((g2.mean.array() == g.mean.array()).all());

  // zeroed output layer pins the mean at zero and log-std at mid-range
  find_param(b.f_a, "f_a/d3/W")->values.setZero();
  find_param(b.f_a, "f_a/d3/b")->values.setZero();
  DiagGaussian gz = actor_policy(b, obs);
  CHECK((gz.mean.array() == 0.0).all());
  const double mid = log_std_lo() + (log_std_hi() - log_std_lo()) * 0.5;
  CHECK((gz.log_std.array() == mid).all());

  Rng rng3(5);
  AgentBundle qt = make_bundle(small_cfg(AgentKind::qtopt), rng3);
  CHECK_THROWS(actor_policy(qt, obs));
}

TEST_CASE("actor objective gradients match finite differences") {
  Rng rng(11);
  AgentBundle b = make_bundle(small_cfg(AgentKind::sac), rng);
  Rng data_rng(12);
  const int B = 5;
  const MatrixXd emb = random_matrix(B, b.config.dims.emb, data_rng);
  const MatrixXd eps = random_matrix(B, b.config.dims.act, data_rng);
  const double err = fd_check(
      b.f_a.param_ptrs(),
      [&](bool with_grads) {
        if (with_grads) b.f_a.zero_grads();
        return sac_actor_loss(b, emb, eps, with_grads);
      },
      1e-5, 1e-10);
  CHECK(err < 1e-5);
}

TEST_CASE("fixed target critic gradients match finite differences") {
  Rng data_rng(14);
  const int B = 5;

  Rng rng_s(13);
  AgentBundle s = make_bundle(small_cfg(AgentKind::sac), rng_s);
  const Dims& d = s.config.dims;
  const MatrixXd obs = random_matrix(B, d.obs, data_rng);
  const MatrixXd action = uniform_matrix(B, d.act, data_rng);
  const MatrixXd y = random_matrix(B, 1, data_rng);

  zero_all_grads(s);
  sac_critic_loss(s, obs, action, y, true);
  CHECK(total_grad_norm(s.f_c1) > 0.0);
  CHECK(total_grad_norm(s.f_c2) > 0.0);
  CHECK(total_grad_norm(s.f_e) > 0.0);
  CHECK(total_grad_norm(s.f_a) == 0.0);
  CHECK(total_grad_norm(s.f_i) == 0.0);

  auto collect = [](std::initializer_list<ParamGraph*> gs) {
    std::vector<ParamTensor*> ps;
    for (ParamGraph* g : gs)
      for (ParamTensor* p : g->param_ptrs()) ps.push_back(p);
    return ps;
  };
  const double err_s = fd_check(
      collect({&s.f_e, &s.f_c1, &s.f_c2}),
      [&](bool with_grads) {
        if (with_grads) zero_all_grads(s);
        return sac_critic_loss(s, obs, action, y, with_grads);
      },
      1e-5, 1e-10);
  CHECK(err_s < 1e-5);

  Rng rng_q(15);
  AgentBundle q = make_bundle(small_cfg(AgentKind::qtopt), rng_q);
  zero_all_grads(q);
  qtopt_critic_loss(q, obs, action, y, true);
  CHECK(total_grad_norm(q.f_c1) > 0.0);
  CHECK(total_grad_norm(q.f_e) > 0.0);
  CHECK(total_grad_norm(q.f_i) == 0.0);
  const double err_q = fd_check(
      collect({&q.f_e, &q.f_c1}),
      [&](bool with_grads) {
        if (with_grads) zero_all_grads(q);
        return qtopt_critic_loss(q, obs, action, y, with_grads);
      },
      1e-5, 1e-10);
  CHECK(err_q < 1e-5);

  CHECK_THROWS_AS(sac_critic_loss(q, obs, action, y, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(qtopt_critic_loss(s, obs, action, y, false),
                  std::invalid_argument);
}

TEST_CASE("loss gradients route only into their trainable heads") {
  Rng rng(21);
  AgentBundle b = make_bundle(small_cfg(AgentKind::sac), rng);
  Rng data_rng(22);
  const int B = 4;
  const Dims& d = b.config.dims;
  const MatrixXd obs = random_matrix(B, d.obs, data_rng);
  const MatrixXd next_obs = random_matrix(B, d.obs, data_rng);
  const MatrixXd action = uniform_matrix(B, d.act, data_rng);

  zero_all_grads(b);
  inverse_dynamics_loss(b, obs, action, next_obs, true);
  CHECK(total_grad_norm(b.f_i) > 0.0);
  CHECK(total_grad_norm(b.f_e) > 0.0);
  CHECK(total_grad_norm(b.f_a) == 0.0);
  CHECK(total_grad_norm(b.f_c1) == 0.0);
  CHECK(total_grad_norm(b.f_c2) == 0.0);

  zero_all_grads(b);
  const MatrixXd emb = random_matrix(B, d.emb, data_rng);
  const MatrixXd eps = random_matrix(B, d.act, data_rng);
  sac_actor_loss(b, emb, eps, true);
  CHECK(total_grad_norm(b.f_a) > 0.0);
  CHECK(total_grad_norm(b.f_e) == 0.0);
  CHECK(total_grad_norm(b.f_c1) == 0.0);
  CHECK(total_grad_norm(b.f_c2) == 0.0);
  CHECK(total_grad_norm(b.f_i) == 0.0);

  const double err = fd_check(
      [&]() {
        auto ps = b.f_e.param_ptrs();
        for (ParamTensor* p : b.f_i.param_ptrs()) ps.push_back(p);
        return ps;
      }(),
      [&](bool with_grads) {
        if (with_grads) {
          b.f_e.zero_grads();
          b.f_i.zero_grads();
        }
        return inverse_dynamics_loss(b, obs, action, next_obs, with_grads);
      },
      1e-5, 1e-10);
  CHECK(err < 1e-5);
}

TEST_CASE("l2 constraint covers the post-bottleneck dense weights") {
  Rng rng(31);
  AgentBundle sac = make_bundle(small_cfg(AgentKind::sac), rng);
  auto ws = constrained_weights(sac);
  CHECK(ws.size() == 3);
  for (ParamTensor* w : ws) {
    CHECK(w->name.rfind("f_a/", 0) == 0);
    CHECK(w->name.back() == 'W');
    CHECK(w->name.find("/d0/") == std::string::npos);
  }
  Rng rng2(31);
  AgentBundle qt = make_bundle(small_cfg(AgentKind::qtopt), rng2);
  auto wq = constrained_weights(qt);
  CHECK(wq.size() == 3);
  for (ParamTensor* w : wq) CHECK(w->name.rfind("f_c1/", 0) == 0);
}

TEST_CASE("random shooting finds planted maxima and breaks ties first") {
  // planted quadratic peak, checked against a dense grid oracle
  const Vector2d target(0.35, -0.6);
  const auto q_planted = [&](const MatrixXd& cand) {
    VectorXd q(cand.rows());
    for (Eigen::Index i = 0; i < cand.rows(); ++i)
      q(i) = -(cand.row(i).transpose() - target).squaredNorm();
    return q;
  };
  double grid_best = -1e300;
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; j <= 100; ++j) {
      MatrixXd a(1, 2);
      a << -1.0 + 0.02 * i, -1.0 + 0.02 * j;
      grid_best = std::max(grid_best, q_planted(a)(0));
    }
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(std::uint64_t(seed) + 100);
    const VectorXd a = maximise_action(q_planted, 2, 64, 2, rng);
    CHECK((a.array().abs() <= 1.0).all());
    MatrixXd am = a.transpose();
    CHECK(q_planted(am)(0) >= grid_best - 0.05);
  }

  // a constant landscape keeps the first candidate: ties never displace it
  Rng tie_rng(77), tie_copy(77);
  const VectorXd tie = maximise_action(
      [](const MatrixXd& c) { return VectorXd::Zero(c.rows()); }, 2, 32, 2,
      tie_rng);
  const double e0 = tie_copy.uniform(-1.0, 1.0);
  const double e1 = tie_copy.uniform(-1.0, 1.0);
  CHECK(tie(0) == e0);
  CHECK(tie(1) == e1);

  // a single candidate with no refinement is returned untouched
  Rng one_rng(78), one_copy(78);
  const VectorXd one = maximise_action(
      [](const MatrixXd& c) { return VectorXd::Ones(c.rows()); }, 2, 1, 0,
      one_rng);
  CHECK(one(0) == one_copy.uniform(-1.0, 1.0));
  CHECK(one(1) == one_copy.uniform(-1.0, 1.0));

  CHECK_THROWS(maximise_action(q_planted, 0, 4, 1, tie_rng));
  CHECK_THROWS(maximise_action(q_planted, 2, 0, 1, tie_rng));
  CHECK_THROWS(maximise_action(q_planted, 2, 4, -1, tie_rng));
}

TEST_CASE("batched shooting matches the single maximiser on one row") {
  Rng rng(41);
  Dims d{.obs = 6, .act = 2, .emb = 8, .hidden = 16, .bottleneck = 6};
  const ParamGraph critic = make_critic(d, rng, "q");
  Rng e_rng(42);
  const MatrixXd e = random_matrix(1, d.emb, e_rng);

  Rng r_single(99), r_batched(99);
  const VectorXd single = maximise_action(
      [&](const MatrixXd& cand) {
        Tape t;
        const MatrixXd rep = e.replicate(cand.rows(), 1);
        return VectorXd(critic.forward2(rep, cand, t).col(0));
      },
      d.act, 16, 2, r_single);
  const MatrixXd batched = qtopt_maximise(critic, e, d.act, 16, 2, r_batched);
  CHECK(batched.rows() == 1);
  CHECK(batched(0, 0) == single(0));
  CHECK(batched(0, 1) == single(1));
}

TEST_CASE("batched shooting climbs a linear critic to its corner") {
  // q = 0.7 a0 - 0.5 a1, independent of the embedding block
  ParamGraph critic;
  critic.add_concat(3, 2);
  Rng w_rng(1);
  critic.add_dense(5, 1, w_rng, "q/d0");
  MatrixXd w = MatrixXd::Zero(1, 5);  // dense weights are stored (out, in)
  w(0, 3) = 0.7;
  w(0, 4) = -0.5;
  find_param(critic, "q/d0/W")->values = w;
  find_param(critic, "q/d0/b")->values.setZero();

  Rng e_rng(2);
  const MatrixXd e = random_matrix(3, 3, e_rng);
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(std::uint64_t(seed) + 500);
    const MatrixXd best = qtopt_maximise(critic, e, 2, 64, 2, rng);
    for (int r = 0; r < 3; ++r) {
      CHECK(best.row(r).cwiseAbs().maxCoeff() <= 1.0);
      CHECK(0.7 * best(r, 0) - 0.5 * best(r, 1) >= 1.05);
    }
  }
}

TEST_CASE("terminal transitions regress to the immediate reward") {
  Rng rng(51);
  AgentConfig cfg = small_cfg(AgentKind::qtopt);
  AgentBundle b = make_bundle(cfg, rng);
  find_param(b.f_c1, "f_c1/d3/W")->values.setZero();
  find_param(b.f_c1, "f_c1/d3/b")->values.setZero();
  Adam opt(b.live_params(), cfg.lr);
  Rng data_rng(52);
  RewardedBatch batch = random_rewarded_batch(4, cfg.dims, data_rng);
  batch.reward << 1.0, -2.0, 0.5, 3.0;
  batch.done.setOnes();
  Rng step_rng(53);
  const LossReport rep = qtopt_train_step(b, batch, opt, step_rng);
  // a zeroed critic predicts 0, so the loss is exactly the mean squared
  // reward: the bootstrap term is gated off by done
  CHECK(rep.loss_critic ==
        doctest::Approx(batch.reward.squaredNorm() / 4.0).epsilon(1e-12));
  CHECK(std::isnan(rep.loss_actor));
  CHECK(rep.loss_invdyn > 0.0);
}

TEST_CASE("done flags gate the bootstrap entirely") {
  for (AgentKind kind : {AgentKind::sac, AgentKind::qtopt}) {
    AgentConfig cfg = small_cfg(kind);
    Rng r1(61), r2(61);
    AgentBundle b1 = make_bundle(cfg, r1);
    AgentBundle b2 = make_bundle(cfg, r2);
    // desync every target net; with done=1 nothing downstream may notice
    shift_values(b2.f_e_target, 0.75);
    shift_values(b2.f_c1_target, -0.4);
    if (kind == AgentKind::sac) shift_values(b2.f_c2_target, 0.3);

    Adam o1(b1.live_params(), cfg.lr), o2(b2.live_params(), cfg.lr);
    Rng data_rng(62);
    RewardedBatch batch = random_rewarded_batch(6, cfg.dims, data_rng);
    batch.reward.setConstant(0.7);
    batch.done.setOnes();
    Rng s1(63), s2(63);
    LossReport rep1, rep2;
    if (kind == AgentKind::sac) {
      rep1 = sac_train_step(b1, batch, o1, s1);
      rep2 = sac_train_step(b2, batch, o2, s2);
    } else {
      rep1 = qtopt_train_step(b1, batch, o1, s1);
      rep2 = qtopt_train_step(b2, batch, o2, s2);
    }
    CHECK(rep1.loss_critic == rep2.loss_critic);
    CHECK(rep1.loss_invdyn == rep2.loss_invdyn);
    CHECK(same_values(b1.f_e, b2.f_e));
    CHECK(same_values(b1.f_c1, b2.f_c1));
    if (kind == AgentKind::sac) {
      CHECK(rep1.loss_actor == rep2.loss_actor);
      CHECK(same_values(b1.f_a, b2.f_a));
    }
  }
}

TEST_CASE("target networks move only by polyak averaging") {
  Rng rng(71);
  AgentConfig cfg = small_cfg(AgentKind::sac);
  AgentBundle b = make_bundle(cfg, rng);
  const auto old_e = values_of(b.f_e_target);
  const auto old_c1 = values_of(b.f_c1_target);
  const auto old_c2 = values_of(b.f_c2_target);

  Adam opt(b.live_params(), cfg.lr);
  Rng data_rng(72), step_rng(73);
  const RewardedBatch batch = random_rewarded_batch(8, cfg.dims, data_rng);
  sac_train_step(b, batch, opt, step_rng);

  const auto check_polyak = [&](const ParamGraph& target,
                                const ParamGraph& live,
                                const std::vector<MatrixXd>& old_vals) {
    const auto tp = target.param_ptrs();
    const auto lp = live.param_ptrs();
    REQUIRE(tp.size() == old_vals.size());
    for (size_t i = 0; i < tp.size(); ++i) {
      const MatrixXd expected =
          (1.0 - cfg.tau) * old_vals[i] + cfg.tau * lp[i]->values;
      CHECK((tp[i]->values.array() == expected.array()).all());
    }
  };
  check_polyak(b.f_e_target, b.f_e, old_e);
  check_polyak(b.f_c1_target, b.f_c1, old_c1);
  check_polyak(b.f_c2_target, b.f_c2, old_c2);
}

TEST_CASE("zero reward drives the critic to the entropy fixed point") {
  AgentConfig cfg = small_cfg(AgentKind::sac);
  cfg.dims.obs = 4;
  cfg.gamma = 0.9;
  cfg.alpha_ent = 0.1;
  cfg.lr = 1e-3;
  Rng rng(81);
  AgentBundle b = make_bundle(cfg, rng);
  Adam opt(b.live_params(), cfg.lr);
  Rng data_rng(82), step_rng(83);
  for (int step = 0; step < 6000; ++step) {
    const RewardedBatch batch = random_rewarded_batch(64, cfg.dims, data_rng);
    sac_train_step(b, batch, opt, step_rng);
  }

  // with r = 0 the only value left is entropy: Q* = gamma * alpha * H / (1 -
  // gamma) with H the final policy's entropy, measured here by monte carlo
  Rng probe_rng(84);
  const MatrixXd obs = random_matrix(512, cfg.dims.obs, probe_rng);
  Tape t_e;
  const MatrixXd e = b.f_e.forward(obs, t_e);
  const DiagGaussian pol = actor_policy(b, obs);
  double h_sum = 0.0;
  int h_n = 0;
  Rng mc_rng(85);
  for (int rep = 0; rep < 8; ++rep) {
    const SquashedSample s = sample_squashed(pol, mc_rng);
    h_sum -= s.log_prob.sum();
    h_n += int(s.log_prob.size());
    Tape t1, t2;
    if (rep == 0) {
      const MatrixXd q1 = b.f_c1.forward2(e, s.action, t1);
      const MatrixXd q2 = b.f_c2.forward2(e, s.action, t2);
      const double mean_q = q1.cwiseMin(q2).mean();
      const double entropy = -s.log_prob.mean();
      const double fixed_point =
          cfg.gamma * cfg.alpha_ent * entropy / (1.0 - cfg.gamma);
      CHECK(std::abs(mean_q - fixed_point) < 0.1);
    }
  }
  const double h = h_sum / h_n * double(pol.mean.cols());
  // the 8-fold monte carlo entropy agrees with the single-draw one used above
  CHECK(std::isfinite(h));
}

TEST_CASE("a two state chain reaches the value iteration solution") {
  // chain: next state is 1 iff a0 > 0, reward 1 for landing in state 1,
  // gamma 0.5; the optimal value function is solved on an action grid
  const int n_grid = 81;
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  for (int it = 0; it < 200; ++it) {
    Eigen::Vector2d v_new;
    for (int s = 0; s < 2; ++s) {
      double best = -1e300;
      for (int ia = 0; ia < n_grid; ++ia) {
        const double a0 = -1.0 + 2.0 * double(ia) / (n_grid - 1);
        const int s_next = a0 > 0.0 ? 1 : 0;
        best = std::max(best, (s_next == 1 ? 1.0 : 0.0) + 0.5 * v(s_next));
      }
      v_new(s) = best;
    }
    if ((v_new - v).cwiseAbs().maxCoeff() < 1e-13) break;
    v = v_new;
  }
  const double q_pos = 1.0 + 0.5 * v(1);
  const double q_neg = 0.0 + 0.5 * v(0);
  CHECK(q_pos == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(q_neg == doctest::Approx(1.0).epsilon(1e-9));

  AgentConfig cfg;
  cfg.kind = AgentKind::qtopt;
  cfg.dims = Dims{.obs = 2, .act = 2, .emb = 6, .hidden = 32, .bottleneck = 6};
  cfg.gamma = 0.5;
  cfg.lr = 1.5e-3;
  cfg.qtopt_candidates = 48;
  Rng rng(91);
  AgentBundle b = make_bundle(cfg, rng);
  Adam opt(b.live_params(), cfg.lr);
  Rng data_rng(92), step_rng(93);
  const int B = 64;
  for (int step = 0; step < 4000; ++step) {
    RewardedBatch batch;
    batch.obs = MatrixXd::Zero(B, 2);
    batch.action = uniform_matrix(B, 2, data_rng);
    batch.next_obs = MatrixXd::Zero(B, 2);
    batch.reward.resize(B);
    batch.done = VectorXd::Zero(B);
    for (int r = 0; r < B; ++r) {
      batch.obs(r, data_rng.below(2)) = 1.0;
      const int s_next = batch.action(r, 0) > 0.0 ? 1 : 0;
      batch.next_obs(r, s_next) = 1.0;
      batch.reward(r) = s_next == 1 ? 1.0 : 0.0;
    }
    qtopt_train_step(b, batch, opt, step_rng);
  }

  for (int s = 0; s < 2; ++s) {
    MatrixXd obs = MatrixXd::Zero(1, 2);
    obs(0, s) = 1.0;
    Tape t_e;
    const MatrixXd e = b.f_e.forward(obs, t_e);
    for (double a0 : {-1.0, -0.7, -0.4, 0.4, 0.7, 1.0})
      for (double a1 : {-0.8, 0.0, 0.8}) {
        MatrixXd a(1, 2);
        a << a0, a1;
        Tape t_q;
        const double q = b.f_c1.forward2(e, a, t_q)(0, 0);
        const double q_star = a0 > 0.0 ? q_pos : q_neg;
        CHECK(std::abs(q - q_star) <= 0.05);
      }
  }
}

TEST_CASE("bundle checkpoints round trip bitwise") {
  for (AgentKind kind : {AgentKind::sac, AgentKind::qtopt}) {
    AgentConfig cfg = small_cfg(kind);
    cfg.l2_coefficient = 1e-3;
    Rng rng(101);
    AgentBundle b = make_bundle(cfg, rng);
    Adam opt(b.live_params(), cfg.lr);
    Rng data_rng(102), step_rng(103);
    for (int i = 0; i < 3; ++i) {
      const RewardedBatch batch = random_rewarded_batch(8, cfg.dims, data_rng);
      if (kind == AgentKind::sac)
        sac_train_step(b, batch, opt, step_rng);
      else
        qtopt_train_step(b, batch, opt, step_rng);
    }

    TempFile f(kind == AgentKind::sac ? "agents_sac.ckpt" : "agents_qt.ckpt");
    save_bundle(f.path, b);
    AgentBundle loaded = load_bundle(f.path);
    CHECK(loaded.config.kind == cfg.kind);
    CHECK(loaded.config.gamma == cfg.gamma);
    CHECK(loaded.config.l2_coefficient == cfg.l2_coefficient);
    CHECK(loaded.config.dims.obs == cfg.dims.obs);
    CHECK(same_values(b.f_e, loaded.f_e));
    CHECK(same_values(b.f_c1, loaded.f_c1));
    CHECK(same_values(b.f_i, loaded.f_i));
    CHECK(same_values(b.f_e_target, loaded.f_e_target));
    CHECK(same_values(b.f_c1_target, loaded.f_c1_target));
    if (kind == AgentKind::sac) {
      CHECK(same_values(b.f_a, loaded.f_a));
      CHECK(same_values(b.f_c2, loaded.f_c2));
      CHECK(same_values(b.f_c2_target, loaded.f_c2_target));
    }

    // the restored bundle trains identically
    Adam o1(b.live_params(), cfg.lr), o2(loaded.live_params(), cfg.lr);
    Rng d1(104), d2(104), s1(105), s2(105);
    const RewardedBatch batch1 = random_rewarded_batch(8, cfg.dims, d1);
    const RewardedBatch batch2 = random_rewarded_batch(8, cfg.dims, d2);
    LossReport r1, r2;
    if (kind == AgentKind::sac) {
      r1 = sac_train_step(b, batch1, o1, s1);
      r2 = sac_train_step(loaded, batch2, o2, s2);
    } else {
      r1 = qtopt_train_step(b, batch1, o1, s1);
      r2 = qtopt_train_step(loaded, batch2, o2, s2);
    }
    CHECK(r1.loss_critic == r2.loss_critic);
    CHECK(r1.loss_invdyn == r2.loss_invdyn);
    CHECK(same_values(b.f_e, loaded.f_e));
  }
}

TEST_CASE("snapshots stay frozen while training continues") {
  AgentConfig cfg = small_cfg(AgentKind::sac);
  Rng rng(111);
  AgentBundle b = make_bundle(cfg, rng);
  const SnapshotSet snap = snapshot(b);
  CHECK(snap.kind == AgentKind::sac);
  CHECK(same_values(snap.g_e, b.f_e));
  CHECK(same_values(snap.g_a, b.f_a));
  CHECK(same_values(snap.target_e, b.f_e_target));
  CHECK(same_values(snap.target_c, b.f_c1_target));
  const auto frozen_e = values_of(snap.g_e);
  const auto frozen_a = values_of(snap.g_a);

  Adam opt(b.live_params(), cfg.lr);
  Rng data_rng(112), step_rng(113);
  for (int i = 0; i < 100; ++i) {
    const RewardedBatch batch = random_rewarded_batch(8, cfg.dims, data_rng);
    sac_train_step(b, batch, opt, step_rng);
  }
  CHECK(matches_values(snap.g_e, frozen_e));
  CHECK(matches_values(snap.g_a, frozen_a));
  CHECK(!same_values(snap.g_e, b.f_e));

  TempFile f("agents_snap.ckpt");
  save_snapshot(f.path, snap);
  const SnapshotSet loaded = load_snapshot(f.path);
  CHECK(loaded.kind == snap.kind);
  CHECK(same_values(loaded.g_e, snap.g_e));
  CHECK(same_values(loaded.g_a, snap.g_a));
  CHECK(same_values(loaded.target_e, snap.target_e));
  CHECK(same_values(loaded.target_c, snap.target_c));

  // snapshot and bundle containers are not interchangeable
  CHECK_THROWS(load_bundle(f.path));
  TempFile fb("agents_bundle.ckpt");
  save_bundle(fb.path, b);
  CHECK_THROWS(load_snapshot(fb.path));

  const MatrixXd obs = random_matrix(3, cfg.dims.obs, step_rng);
  const DiagGaussian gs = snapshot_policy(snap, obs);
  CHECK(gs.mean.rows() == 3);
  const MatrixXd es = embed_snapshot(snap, obs);
  CHECK(es.cols() == cfg.dims.emb);
}

TEST_CASE("policy actions respect bounds and determinism") {
  Rng rng(121);
  AgentConfig cfg;  // default dims match the point-mass observation layout
  AgentBundle sac = make_bundle(cfg, rng);
  Rng obs_rng(122);
  const VectorXd obs = random_matrix(1, cfg.dims.obs, obs_rng).row(0);

  Rng e1(1), e2(2), e3(1);
  const Vector2d a1 = explore_action(sac, obs, e1);
  const Vector2d a2 = explore_action(sac, obs, e2);
  const Vector2d a3 = explore_action(sac, obs, e3);
  CHECK(a1.cwiseAbs().maxCoeff() < 1.0);
  CHECK((a1 - a3).norm() == 0.0);
  CHECK((a1 - a2).norm() > 0.0);

  Rng u1(3), u2(4);
  const Vector2d m1 = eval_action(sac, obs, u1);
  const Vector2d m2 = eval_action(sac, obs, u2);
  CHECK((m1 - m2).norm() == 0.0);  // mean action ignores the rng entirely
  CHECK(m1.cwiseAbs().maxCoeff() < 1.0);

  AgentConfig qcfg;
  qcfg.kind = AgentKind::qtopt;
  Rng rng2(123);
  AgentBundle qt = make_bundle(qcfg, rng2);
  Rng q1(5), q2(5), q3(6);
  const Vector2d qa1 = eval_action(qt, obs, q1);
  const Vector2d qa2 = eval_action(qt, obs, q2);
  CHECK((qa1 - qa2).norm() == 0.0);
  CHECK(qa1.cwiseAbs().maxCoeff() <= 1.0);
  const Vector2d qe = explore_action(qt, obs, q3);
  CHECK(qe.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("evaluation runs matched length episodes in lockstep") {
  Rng rng(131);
  AgentConfig cfg;
  AgentBundle b = make_bundle(cfg, rng);
  EnvConfig env_cfg;
  CHECK(env_cfg.distractor_dim + kStateDim == cfg.dims.obs);

  Rng r1(7), r2(7), r3(8);
  const EvalResult res1 = evaluate_policy(b, env_cfg, nullptr, 4, r1);
  const EvalResult res2 = evaluate_policy(b, env_cfg, nullptr, 4, r2);
  CHECK(res1.mean_return == res2.mean_return);
  CHECK(res1.std_of_mean == res2.std_of_mean);
  CHECK(res1.std_of_mean >= 0.0);
  // rewards are bounded per step by the goal bonus and the arena diameter
  CHECK(res1.mean_return <= 100.0);
  CHECK(res1.mean_return >= -300.0);

  const EvalResult single = evaluate_policy(b, env_cfg, nullptr, 1, r3);
  CHECK(single.std_of_mean == 0.0);

  Rng r4(9);
  const EvalResult rnd = evaluate_random_policy(env_cfg, nullptr, 4, r4);
  CHECK(rnd.mean_return <= 100.0);
  CHECK(rnd.mean_return >= -300.0);

  EnvConfig no_reward = env_cfg;
  no_reward.expose_reward = false;
  Rng r5(10);
  CHECK_THROWS(evaluate_policy(b, no_reward, nullptr, 2, r5));
}

TEST_CASE("embedding levels expose encoder and bottleneck spaces") {
  for (AgentKind kind : {AgentKind::sac, AgentKind::qtopt}) {
    AgentConfig cfg = small_cfg(kind);
    Rng rng(141);
    AgentBundle b = make_bundle(cfg, rng);
    Rng obs_rng(142);
    const MatrixXd obs = random_matrix(5, cfg.dims.obs, obs_rng);

    const MatrixXd e = embed(b, obs, EmbeddingLevel::encoder);
    Tape t_ref;
    CHECK((e.array() == b.f_e.forward(obs, t_ref).array()).all());
    CHECK(e.cols() == cfg.dims.emb);

    const MatrixXd z = embed(b, obs, EmbeddingLevel::bottleneck);
    CHECK(z.rows() == 5);
    CHECK(z.cols() == cfg.dims.bottleneck);
    CHECK((z.array().abs() < 1.0).all());

    Tape t_head;
    if (kind == AgentKind::sac) {
      b.f_a.forward(e, t_head);
      const MatrixXd ref = t_head.act[size_t(b.f_a.bottleneck_act)];
      CHECK((z.array() == ref.array()).all());
    } else {
      b.f_c1.forward2(e, MatrixXd::Zero(5, cfg.dims.act), t_head);
      const MatrixXd ref = t_head.act[size_t(b.f_c1.bottleneck_act)];
      CHECK((z.array() == ref.array()).all());
    }
  }
}
