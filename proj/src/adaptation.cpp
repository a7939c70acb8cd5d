#include "adaptlab/adaptation.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adaptlab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void add_obs_noise(MatrixXd& m, double noise, Rng& rng) {
  if (noise <= 0.0) return;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += noise * rng.gauss();
}

}  // namespace

double bc_loss_sac(AgentBundle& bundle, const SnapshotSet& snap,
                   const MatrixXd& obs, bool accumulate_grads) {
  require(bundle.is_sac(), "bc loss (sac): bundle has no actor");
  require(snap.kind == AgentKind::sac, "bc loss (sac): snapshot has no actor");
  require(int(obs.cols()) == bundle.config.dims.obs,
          "bc loss (sac): observation width mismatch");
  const int act = bundle.config.dims.act;
  const double b = double(obs.rows());

  const DiagGaussian g = snapshot_policy(snap, obs);

  Tape t_e, t_a;
  const MatrixXd e = bundle.f_e.forward(obs, t_e);  // constant, never backwarded
  const DiagGaussian f = split_gaussian(bundle.f_a.forward(e, t_a));

  const Eigen::ArrayXXd var_f = (2.0 * f.log_std).array().exp();
  const Eigen::ArrayXXd var_g = (2.0 * g.log_std).array().exp();
  const Eigen::ArrayXXd dmu = f.mean.array() - g.mean.array();

  // KL(g || f) of diagonal Gaussians, summed over dims, averaged over rows
  const Eigen::ArrayXXd kl = f.log_std.array() - g.log_std.array() - 0.5 +
                             (var_g + dmu.square()) / (2.0 * var_f);
  const double loss = kl.sum() / b;

  if (accumulate_grads) {
    MatrixXd out_grad(obs.rows(), 2 * act);
    out_grad.leftCols(act) = (dmu / var_f / b).matrix();
    out_grad.rightCols(act) =
        ((1.0 - var_g / var_f - dmu.square() / var_f) / b).matrix();
    // input gradient dropped: the encoder is a constant for this loss
    bundle.f_a.backward(t_a, out_grad, true);
  }
  return loss;
}

double bc_loss_qtopt(AgentBundle& bundle, const SnapshotSet& snap,
                     const MatrixXd& obs, const MatrixXd& action,
                     bool accumulate_grads) {
  require(!bundle.is_sac(), "bc loss (qtopt): bundle is not qtopt");
  require(snap.kind == AgentKind::qtopt,
          "bc loss (qtopt): snapshot is not qtopt");
  require(int(obs.cols()) == bundle.config.dims.obs,
          "bc loss (qtopt): observation width mismatch");
  require(action.rows() == obs.rows() &&
              int(action.cols()) == bundle.config.dims.act,
          "bc loss (qtopt): action shape mismatch");

  Tape t_ref_e, t_ref_c;
  const MatrixXd q_ref = snap.target_c.forward2(
      snap.target_e.forward(obs, t_ref_e), action, t_ref_c);

  Tape t_e, t_c;
  const MatrixXd e = bundle.f_e.forward(obs, t_e);  // constant, never backwarded
  const MatrixXd q = bundle.f_c1.forward2(e, action, t_c);

  const LossGrad l = mse_loss(q, q_ref);
  if (accumulate_grads) bundle.f_c1.backward(t_c, l.grad, true);
  return l.value;
}

RewardFreeBatch adaptation_batch(const ReplayBuffer<RewardFreeTransition>& buf,
                                 AdaptRegime regime, int batch, double noise,
                                 Rng& rng) {
  require(batch > 0, "adaptation batch: batch must be positive");
  RewardFreeBatch out;
  if (regime == AdaptRegime::online) {
    const RewardFreeTransition& t = buf.newest();
    out.obs = t.obs.transpose().replicate(batch, 1);
    out.action = t.action.transpose().replicate(batch, 1);
    out.next_obs = t.next_obs.transpose().replicate(batch, 1);
  } else {
    out = to_batch(buf.sample(batch, rng));
  }
  add_obs_noise(out.obs, noise, rng);
  add_obs_noise(out.next_obs, noise, rng);
  return out;
}

MetricSeries adapt(AgentBundle& bundle, const SnapshotSet& snap,
                   const EnvConfig& source_cfg, const EnvConfig& target_cfg,
                   const VideoBank* bank, const AdaptConfig& cfg, Rng& rng) {
  require(cfg.steps >= 0, "adapt: steps must be non-negative");
  require(cfg.batch > 0 && cfg.buffer_capacity >= cfg.batch,
          "adapt: need 0 < batch <= capacity");
  require(cfg.grad_steps_per_frame >= 1,
          "adapt: grad_steps_per_frame must be positive");
  require(cfg.diag_every >= 1, "adapt: diag_every must be positive");
  const bool use_bc = cfg.regime == AdaptRegime::replay_bc;
  const bool use_buffer = cfg.regime != AdaptRegime::online;
  if (use_buffer)
    require(cfg.prefill >= cfg.batch, "adapt: replay needs prefill >= batch");
  if (use_bc)
    require(snap.kind == bundle.config.kind, "adapt: snapshot kind mismatch");

  Rng base(rng.next_u64());
  Rng act_rng = base.fork("act");
  Rng batch_rng = base.fork("batch");
  Rng eval_rng = base.fork("eval");
  Rng pair_rng = base.fork("pairs");

  // interaction happens on reward-stripped copies; the transition type has
  // no reward field, so nothing downstream can read one
  EnvConfig src_free = source_cfg;
  src_free.expose_reward = false;
  EnvConfig tgt_free = target_cfg;
  tgt_free.expose_reward = false;
  PointMassEnv src_env(src_free, base.fork("source_env"), bank);
  PointMassEnv tgt_env(tgt_free, base.fork("target_env"), bank);

  EnvConfig src_eval = source_cfg;
  src_eval.expose_reward = true;
  EnvConfig tgt_eval = target_cfg;
  tgt_eval.expose_reward = true;

  VectorXd obs_t = tgt_env.reset();
  require(int(obs_t.size()) == bundle.config.dims.obs,
          "adapt: environment and bundle disagree on observation width");
  VectorXd obs_s = src_env.reset();

  // matched-pair set fixed before the first update, collected under the
  // pre-adaptation deterministic policy (a frozen draw stream per call
  // keeps the shooting argmax a pure function of the observation)
  PointMassEnv pair_src(src_free, base.fork("pair_source"), bank);
  PointMassEnv pair_tgt(tgt_free, base.fork("pair_target"), bank);
  const std::uint64_t policy_seed = base.fork("pair_policy").next_u64();
  const AgentBundle* bp = &bundle;
  const DeterministicPolicy pre_policy = [bp,
                                          policy_seed](const VectorXd& o) {
    Rng r(policy_seed);
    return eval_action(*bp, o, r);
  };
  const std::vector<MatchedPair> pairs = collect_matched_episodes(
      pre_policy, cfg.n_matched_episodes, pair_src, pair_tgt, pair_rng);
  MatrixXd pair_src_obs(Eigen::Index(pairs.size()), obs_t.size());
  MatrixXd pair_tgt_obs(Eigen::Index(pairs.size()), obs_t.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    pair_src_obs.row(Eigen::Index(i)) = pairs[i].obs_source.transpose();
    pair_tgt_obs.row(Eigen::Index(i)) = pairs[i].obs_target.transpose();
  }

  const Embedder live_enc = [bp](const MatrixXd& o) {
    return embed(*bp, o, EmbeddingLevel::encoder);
  };
  const SnapshotSet* sp = &snap;
  const Embedder snap_enc = [sp](const MatrixXd& o) {
    return embed_snapshot(*sp, o);
  };

  MetricSeries series;
  series.pairs = pairs;
  auto diagnose = [&](int step, double invdyn_l, double bc_l) {
    AdaptDiagRow row;
    row.step = step;
    row.source_return =
        evaluate_policy(bundle, src_eval, bank, cfg.n_eval_episodes, eval_rng)
            .mean_return;
    row.target_return =
        evaluate_policy(bundle, tgt_eval, bank, cfg.n_eval_episodes, eval_rng)
            .mean_return;
    row.invdyn_loss = invdyn_l;
    row.bc_loss = bc_l;
    const MatrixXd enc_s = embed(bundle, pair_src_obs, EmbeddingLevel::encoder);
    const MatrixXd enc_t = embed(bundle, pair_tgt_obs, EmbeddingLevel::encoder);
    const MatrixXd bot_s =
        embed(bundle, pair_src_obs, EmbeddingLevel::bottleneck);
    const MatrixXd bot_t =
        embed(bundle, pair_tgt_obs, EmbeddingLevel::bottleneck);
    row.cos_dist_encoder = matched_distance(enc_s, enc_t, Metric::cosine).mean;
    row.cos_dist_bottleneck =
        matched_distance(bot_s, bot_t, Metric::cosine).mean;
    row.mse_dist_encoder = matched_distance(enc_s, enc_t, Metric::mse).mean;
    row.mse_dist_bottleneck = matched_distance(bot_s, bot_t, Metric::mse).mean;
    row.forget_cos =
        forgetting_distance(pair_src_obs, live_enc, snap_enc, Metric::cosine);
    series.rows.push_back(row);
    const std::vector<TriangleRow> tri =
        triangle_decomposition(pair_src_obs, pair_tgt_obs, live_enc, snap_enc);
    for (size_t i = 0; i < tri.size(); ++i)
      series.triangle.push_back(
          {step, int(i), tri[i].cross, tri[i].forget, tri[i].align});
  };

  diagnose(0, kNaN, kNaN);
  if (cfg.steps == 0) return series;

  ReplayBuffer<RewardFreeTransition> d_target(cfg.buffer_capacity);
  ReplayBuffer<RewardFreeTransition> d_source(cfg.buffer_capacity);
  auto collect = [&](PointMassEnv& env, VectorXd& o,
                     ReplayBuffer<RewardFreeTransition>& buf) {
    const Vector2d a = explore_action(bundle, o, act_rng);
    const StepResult sr = env.step(a);
    buf.push(RewardFreeTransition{o, a, sr.obs});
    o = sr.done ? env.reset() : sr.obs;
  };
  if (use_buffer) {
    for (int i = 0; i < cfg.prefill; ++i) collect(tgt_env, obs_t, d_target);
    if (use_bc)
      for (int i = 0; i < cfg.prefill; ++i) collect(src_env, obs_s, d_source);
  }

  Adam opt(bundle.live_params(), cfg.lr);
  const std::vector<ParamTensor*> live = bundle.live_params();
  double last_inv = kNaN;
  double last_bc = kNaN;
  for (int step = 1; step <= cfg.steps; ++step) {
    collect(tgt_env, obs_t, d_target);
    if (use_bc) collect(src_env, obs_s, d_source);
    for (int g = 0; g < cfg.grad_steps_per_frame; ++g) {
      for (ParamTensor* p : live) p->zero_grad();
      const RewardFreeBatch b = adaptation_batch(
          d_target, cfg.regime, cfg.batch, cfg.augment_noise, batch_rng);
      last_inv =
          inverse_dynamics_loss(bundle, b.obs, b.action, b.next_obs, true);
      if (use_bc) {
        const RewardFreeBatch bb =
            adaptation_batch(d_source, AdaptRegime::replay, cfg.batch,
                             cfg.augment_noise, batch_rng);
        last_bc = bundle.is_sac()
                      ? bc_loss_sac(bundle, snap, bb.obs, true)
                      : bc_loss_qtopt(bundle, snap, bb.obs, bb.action, true);
        if (cfg.bc_weight != 1.0) {
          // the bc gradients live in exactly one graph the inverse-dynamics
          // loss never touches, so scaling after the fact is exact
          ParamGraph& head = bundle.is_sac() ? bundle.f_a : bundle.f_c1;
          for (ParamTensor* p : head.param_ptrs()) p->grad *= cfg.bc_weight;
        }
      }
      if (!std::isfinite(last_inv) || (use_bc && !std::isfinite(last_bc))) {
        series.aborted = true;
        return series;
      }
      opt.step();
    }
    if (step % cfg.diag_every == 0 || step == cfg.steps)
      diagnose(step, last_inv, last_bc);
  }
  return series;
}

}  // namespace adaptlab
