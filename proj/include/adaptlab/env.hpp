#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "adaptlab/rng.hpp"

namespace adaptlab {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

// observation layout: [position(2), velocity(2), target(2), distractor(d)]
constexpr int kStateDim = 6;

struct EnvState {
  Vector2d position{0, 0};
  Vector2d velocity{0, 0};
  Vector2d target{0, 0};
  int step_index = 0;
};

enum class ObsMode { source, colour, background };

// 10 bounded random-walk distractor sequences shared by all background
// episodes of one experiment; regenerating from the same seed is bitwise
// identical
struct VideoBank {
  std::vector<MatrixXd> seqs;  // each (frames, dim)
  int frames() const { return seqs.empty() ? 0 : int(seqs[0].rows()); }
  int dim() const { return seqs.empty() ? 0 : int(seqs[0].cols()); }
  static VideoBank generate(Rng rng, int n_seqs = 10, int frames = 100,
                            int dim = 8);
};

struct StepResult {
  VectorXd obs;
  std::optional<double> reward;  // absent on reward-free environments
  bool done = false;
};

struct Transition {
  VectorXd obs;
  Vector2d action;
  std::optional<double> reward;
  VectorXd obs_next;
  bool done = false;
};

struct MatchedPair {
  EnvState state;
  Vector2d action;
  VectorXd obs_source;
  VectorXd obs_target;
};

struct EnvConfig {
  ObsMode mode = ObsMode::source;
  bool expose_reward = true;
  int episode_length = 100;
  int distractor_dim = 8;
  double beta = 0.5;    // colour draw range
  double v_max = 0.5;
};

// Deterministic 2-D point mass: velocity <- clip(0.9 v + 0.1 a, +-v_max),
// position <- clip(position + velocity, +-1), reward 1 inside the 0.1 goal
// disc else -distance, episode ends at episode_length steps. The observation
// model adds nothing to the dynamics; distraction parameters are drawn once
// per episode from the env's own stream.
class PointMassEnv {
 public:
  PointMassEnv(const EnvConfig& cfg, Rng rng, const VideoBank* bank = nullptr);

  VectorXd reset();
  // synchronised start for matched episodes; distraction still drawn from
  // this env's stream
  VectorXd reset_to(const EnvState& s);
  StepResult step(const Vector2d& action);

  VectorXd observe() const;  // observation of the current state
  const EnvState& state() const { return state_; }
  int obs_dim() const { return kStateDim + cfg_.distractor_dim; }
  const EnvConfig& config() const { return cfg_; }

  EnvState sample_initial_state();  // advances the env stream

  // per-episode draws, exposed for diagnostics
  const VectorXd& colour_state_draw() const { return u_s_; }
  const VectorXd& colour_distractor_draw() const { return u_d_; }
  int video_index() const { return video_index_; }

 private:
  void draw_episode_distraction();
  EnvConfig cfg_;
  Rng rng_;
  const VideoBank* bank_;
  EnvState state_;
  VectorXd u_s_, u_d_;
  int video_index_ = 0;
};

using DeterministicPolicy = std::function<Vector2d(const VectorXd& obs)>;

// Runs n_episodes with initial states drawn from state_rng, applied to both
// envs; one shared action sequence chosen by the policy on the source
// observation. Records one pair per step.
std::vector<MatchedPair> collect_matched_episodes(
    const DeterministicPolicy& policy, int n_episodes, PointMassEnv& source,
    PointMassEnv& target, Rng& state_rng);

}  // namespace adaptlab
