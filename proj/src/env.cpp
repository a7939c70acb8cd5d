#include "adaptlab/env.hpp"

#include <stdexcept>

namespace adaptlab {

namespace {

double clip(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace

VideoBank VideoBank::generate(Rng rng, int n_seqs, int frames, int dim) {
  VideoBank bank;
  bank.seqs.reserve(n_seqs);
  for (int s = 0; s < n_seqs; ++s) {
    MatrixXd seq(frames, dim);
    for (int j = 0; j < dim; ++j) seq(0, j) = rng.uniform(-1.0, 1.0);
    for (int t = 1; t < frames; ++t)
      for (int j = 0; j < dim; ++j)
        seq(t, j) = clip(seq(t - 1, j) + 0.08 * rng.gauss(), -1.0, 1.0);
    bank.seqs.push_back(std::move(seq));
  }
  return bank;
}

PointMassEnv::PointMassEnv(const EnvConfig& cfg, Rng rng, const VideoBank* bank)
    : cfg_(cfg), rng_(rng), bank_(bank) {
  if (cfg_.mode == ObsMode::background) {
    if (!bank_ || bank_->seqs.empty())
      throw std::runtime_error("env: background mode needs a video bank");
    if (bank_->dim() != cfg_.distractor_dim)
      throw std::runtime_error("env: video bank dim mismatch");
  }
  u_s_ = VectorXd::Zero(kStateDim);
  u_d_ = VectorXd::Zero(cfg_.distractor_dim);
}

EnvState PointMassEnv::sample_initial_state() {
  EnvState s;
  for (int i = 0; i < 2; ++i) s.position[i] = rng_.uniform(-1.0, 1.0);
  for (int i = 0; i < 2; ++i) s.target[i] = rng_.uniform(-1.0, 1.0);
  s.velocity.setZero();
  s.step_index = 0;
  return s;
}

void PointMassEnv::draw_episode_distraction() {
  switch (cfg_.mode) {
    case ObsMode::source:
      break;
    case ObsMode::colour:
      for (int i = 0; i < u_s_.size(); ++i)
        u_s_[i] = rng_.uniform(-cfg_.beta, cfg_.beta);
      for (int i = 0; i < u_d_.size(); ++i)
        u_d_[i] = rng_.uniform(-cfg_.beta, cfg_.beta);
      break;
    case ObsMode::background:
      video_index_ = rng_.below(int(bank_->seqs.size()));
      break;
  }
}

VectorXd PointMassEnv::reset() { return reset_to(sample_initial_state()); }

VectorXd PointMassEnv::reset_to(const EnvState& s) {
  state_ = s;
  state_.step_index = 0;
  draw_episode_distraction();
  return observe();
}

VectorXd PointMassEnv::observe() const {
  VectorXd obs(obs_dim());
  obs.segment<2>(0) = state_.position;
  obs.segment<2>(2) = state_.velocity;
  obs.segment<2>(4) = state_.target;
  switch (cfg_.mode) {
    case ObsMode::source:
      obs.tail(cfg_.distractor_dim).setZero();
      break;
    case ObsMode::colour:
      obs.head(kStateDim).array() *= (1.0 + u_s_.array());
      obs.tail(cfg_.distractor_dim) = u_d_;
      break;
    case ObsMode::background: {
      int frame = state_.step_index % bank_->frames();
      obs.tail(cfg_.distractor_dim) =
          bank_->seqs[size_t(video_index_)].row(frame).transpose();
      break;
    }
  }
  return obs;
}

StepResult PointMassEnv::step(const Vector2d& action) {
  Vector2d a(clip(action[0], -1.0, 1.0), clip(action[1], -1.0, 1.0));
  for (int i = 0; i < 2; ++i) {
    state_.velocity[i] =
        clip(0.9 * state_.velocity[i] + 0.1 * a[i], -cfg_.v_max, cfg_.v_max);
    state_.position[i] = clip(state_.position[i] + state_.velocity[i], -1.0, 1.0);
  }
  state_.step_index += 1;
  StepResult r;
  r.obs = observe();
  double dist = (state_.position - state_.target).norm();
  if (cfg_.expose_reward) r.reward = dist < 0.1 ? 1.0 : -dist;
  r.done = state_.step_index >= cfg_.episode_length;
  return r;
}

std::vector<MatchedPair> collect_matched_episodes(
    const DeterministicPolicy& policy, int n_episodes, PointMassEnv& source,
    PointMassEnv& target, Rng& state_rng) {
  if (source.config().episode_length != target.config().episode_length)
    throw std::runtime_error("matched episodes: episode length mismatch");
  std::vector<MatchedPair> pairs;
  pairs.reserve(size_t(n_episodes) * size_t(source.config().episode_length));
  for (int ep = 0; ep < n_episodes; ++ep) {
    EnvState s0;
    for (int i = 0; i < 2; ++i) s0.position[i] = state_rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 2; ++i) s0.target[i] = state_rng.uniform(-1.0, 1.0);
    VectorXd obs_src = source.reset_to(s0);
    VectorXd obs_tgt = target.reset_to(s0);
    for (int t = 0; t < source.config().episode_length; ++t) {
      MatchedPair p;
      p.state = source.state();
      p.action = policy(obs_src);
      p.obs_source = obs_src;
      p.obs_target = obs_tgt;
      pairs.push_back(p);
      StepResult rs = source.step(p.action);
      StepResult rt = target.step(p.action);
      obs_src = rs.obs;
      obs_tgt = rt.obs;
    }
  }
  return pairs;
}

}  // namespace adaptlab
