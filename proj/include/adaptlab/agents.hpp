#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "adaptlab/env.hpp"
#include "adaptlab/nets.hpp"
#include "adaptlab/replay.hpp"

namespace adaptlab {

enum class AgentKind { sac, qtopt };

struct AgentConfig {
  AgentKind kind = AgentKind::sac;
  Dims dims;
  double gamma = 0.99;
  double alpha_ent = 0.1;        // SAC entropy temperature
  double tau = 0.005;            // Polyak rate for target networks
  double lr = 3e-4;
  double l2_coefficient = 0.0;   // post-bottleneck dense weights of the
                                 // policy-defining head (actor for SAC,
                                 // critic for QT-Opt)
  int qtopt_candidates = 64;
  int qtopt_refine_iters = 2;
  double qtopt_explore_noise = 0.2;
};

// One encoder shared by all heads; targets are Polyak copies used for
// Bellman backups and, after training, as the frozen reference nets.
struct AgentBundle {
  AgentConfig config;
  ParamGraph f_e;
  ParamGraph f_a;            // SAC only
  ParamGraph f_c1;
  ParamGraph f_c2;           // SAC twin critic only
  ParamGraph f_i;
  ParamGraph f_e_target;
  ParamGraph f_c1_target;
  ParamGraph f_c2_target;    // SAC only

  bool is_sac() const { return config.kind == AgentKind::sac; }
  // live trainable parameters, in a fixed order (targets excluded)
  std::vector<ParamTensor*> live_params();
};

AgentBundle make_bundle(const AgentConfig& cfg, Rng& rng);

// Frozen reference networks: g_e/g_a cloned from the live nets at snapshot
// time, target_e/target_c cloned from the training target nets. Value
// equality with the sources is bitwise at creation; nothing mutates them.
struct SnapshotSet {
  AgentKind kind = AgentKind::sac;
  Dims dims;
  ParamGraph g_e;
  ParamGraph g_a;       // SAC only
  ParamGraph target_e;
  ParamGraph target_c;
};

SnapshotSet snapshot(const AgentBundle& bundle);

// checkpoint container round-trip for a bundle, including targets and
// scalar metadata validated on load
void save_bundle(const std::string& path, const AgentBundle& bundle);
AgentBundle load_bundle(const std::string& path);
void save_snapshot(const std::string& path, const SnapshotSet& snap);
SnapshotSet load_snapshot(const std::string& path);

struct LossReport {
  double loss_actor = std::numeric_limits<double>::quiet_NaN();
  double loss_critic = std::numeric_limits<double>::quiet_NaN();
  double loss_invdyn = std::numeric_limits<double>::quiet_NaN();
};

// One joint update: all losses evaluated at the pre-update parameters,
// gradients summed, a single optimiser step, then Polyak target updates.
// The optimiser must have been built over bundle.live_params().
LossReport sac_train_step(AgentBundle& bundle, const RewardedBatch& batch,
                          Adam& opt, Rng& rng);
LossReport qtopt_train_step(AgentBundle& bundle, const RewardedBatch& batch,
                            Adam& opt, Rng& rng);

// Reparameterised actor objective mean(alpha * log pi - min Q) on an
// embedding batch with fixed standard-normal draws; accumulates gradients
// into the actor only (exposed separately for finite-difference checks).
double sac_actor_loss(AgentBundle& bundle, const MatrixXd& emb,
                      const MatrixXd& eps, bool accumulate_grads);

// Twin-critic regression at fixed target values y (column per batch row):
// summed MSE of both critics at the live embedding, gradients through the
// critics into the encoder. The train step runs the same pipeline with y
// built from the target networks, which the gradient treats as constant;
// exposed separately for finite-difference checks.
double sac_critic_loss(AgentBundle& bundle, const MatrixXd& obs,
                       const MatrixXd& action, const MatrixXd& y,
                       bool accumulate_grads);
// single-critic variant of the same regression
double qtopt_critic_loss(AgentBundle& bundle, const MatrixXd& obs,
                         const MatrixXd& action, const MatrixXd& y,
                         bool accumulate_grads);

// inverse-dynamics MSE on (obs, action, next_obs); gradients into f_i and
// f_e only
double inverse_dynamics_loss(AgentBundle& bundle, const MatrixXd& obs,
                             const MatrixXd& action, const MatrixXd& next_obs,
                             bool accumulate_grads);

// post-bottleneck dense weight tensors of the constrained head (actor for
// SAC, critic for QT-Opt), the l2-penalty target
std::vector<ParamTensor*> constrained_weights(AgentBundle& bundle);

// Random-shooting maximisation of q over [-1,1]^act_dim: n_candidates
// uniform draws, then refine_iters rounds refitting a Gaussian to the top
// tenth (std floored at 0.01) and resampling; returns the best action seen,
// first maximum winning ties.
VectorXd maximise_action(
    const std::function<VectorXd(const MatrixXd&)>& q_values, int act_dim,
    int n_candidates, int refine_iters, Rng& rng);

// batched variant: one argmax per embedding row under the given critic
MatrixXd qtopt_maximise(const ParamGraph& critic, const MatrixXd& emb,
                        int act_dim, int n_candidates, int refine_iters,
                        Rng& rng);

// stochastic policy used for environment interaction during training and
// adaptation data collection
Vector2d explore_action(const AgentBundle& bundle, const VectorXd& obs,
                        Rng& rng);
// deterministic policy: Gaussian mean for SAC, shooting argmax for QT-Opt
Vector2d eval_action(const AgentBundle& bundle, const VectorXd& obs, Rng& rng);
// batched deterministic policy over observation rows
MatrixXd eval_actions(const AgentBundle& bundle, const MatrixXd& obs,
                      Rng& rng);

enum class EmbeddingLevel { encoder, bottleneck };

// diagnostic embedding of observation rows; bottleneck uses the actor head
// for SAC and the critic head probed at zero action for QT-Opt
MatrixXd embed(const AgentBundle& bundle, const MatrixXd& obs,
               EmbeddingLevel level);
// encoder-level embedding under the snapshot nets
MatrixXd embed_snapshot(const SnapshotSet& snap, const MatrixXd& obs);

// pre-squash policy of the live and snapshot actors at one observation batch
DiagGaussian actor_policy(const AgentBundle& bundle, const MatrixXd& obs);
DiagGaussian snapshot_policy(const SnapshotSet& snap, const MatrixXd& obs);

struct EvalResult {
  double mean_return = 0.0;
  double std_of_mean = 0.0;
};

// n_episodes fresh episodes in lockstep under the deterministic policy; the
// environment must expose rewards
EvalResult evaluate_policy(const AgentBundle& bundle, const EnvConfig& cfg,
                           const VideoBank* bank, int n_episodes, Rng& rng);

// mean return of uniform random actions, the reference scale for trained
// performance
EvalResult evaluate_random_policy(const EnvConfig& cfg, const VideoBank* bank,
                                  int n_episodes, Rng& rng);

}  // namespace adaptlab
