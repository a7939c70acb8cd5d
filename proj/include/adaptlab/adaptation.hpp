#pragma once

#include <vector>

#include "adaptlab/agents.hpp"
#include "adaptlab/geometry.hpp"

namespace adaptlab {

// online: every update uses only the newest transition, replicated
// batch-wise with fresh observation noise. replay: updates sample a FIFO
// buffer of target-domain transitions. replay_bc: replay plus a
// behaviour-cloning penalty against the frozen snapshot on source-domain
// observations collected in parallel.
enum class AdaptRegime { online, replay, replay_bc };

struct AdaptConfig {
  AdaptRegime regime = AdaptRegime::replay;
  int steps = 5000;             // environment frames in the shifted domain
  int prefill = 500;            // buffer warm-up frames (replay regimes only)
  int batch = 64;
  double augment_noise = 0.01;  // iid Gaussian noise added to observations
  int grad_steps_per_frame = 1;
  double bc_weight = 1.0;       // scale on the behaviour-cloning gradients
  double lr = 1e-4;             // fresh Adam over the live parameters
  int buffer_capacity = 10000;
  int diag_every = 100;         // diagnostic cadence in frames
  int n_matched_episodes = 5;   // fixed matched-pair set size
  int n_eval_episodes = 5;      // episodes per return estimate
};

// Mean KL divergence from the snapshot policy g_a(g_e(obs)) to the live
// policy f_a(f_e(obs)) of the pre-squash Gaussians, both heads fed the same
// observations. The live encoder is treated as a constant: gradients
// accumulate into the actor only.
double bc_loss_sac(AgentBundle& bundle, const SnapshotSet& snap,
                   const MatrixXd& obs, bool accumulate_grads);

// MSE between the live critic at the live encoder and the frozen target
// critic at the frozen target encoder, both probed at the stored actions.
// Gradients accumulate into the live critic only.
double bc_loss_qtopt(AgentBundle& bundle, const SnapshotSet& snap,
                     const MatrixXd& obs, const MatrixXd& action,
                     bool accumulate_grads);

// Update batch for one adaptation step: online replicates the newest
// transition, the replay regimes sample uniformly; either way iid
// observation noise is then added element-wise to obs and next_obs.
RewardFreeBatch adaptation_batch(const ReplayBuffer<RewardFreeTransition>& buf,
                                 AdaptRegime regime, int batch, double noise,
                                 Rng& rng);

// One diagnostic snapshot; losses are the latest update values and are NaN
// before the first update (and bc_loss is NaN outside replay_bc).
struct AdaptDiagRow {
  int step = 0;
  double source_return = 0.0;
  double target_return = 0.0;
  double invdyn_loss = 0.0;
  double bc_loss = 0.0;
  double cos_dist_encoder = 0.0;     // matched-pair mean, encoder output
  double cos_dist_bottleneck = 0.0;  // matched-pair mean, head bottleneck
  double mse_dist_encoder = 0.0;
  double mse_dist_bottleneck = 0.0;
  double forget_cos = 0.0;  // live vs snapshot encoder on source obs
};

struct TriangleLogRow {
  int step = 0;
  int pair = 0;
  double cross = 0.0;
  double forget = 0.0;
  double align = 0.0;
};

struct MetricSeries {
  std::vector<AdaptDiagRow> rows;
  std::vector<TriangleLogRow> triangle;
  // the fixed evaluation set behind the distance columns, in collection
  // order (episode-major, one pair per step)
  std::vector<MatchedPair> pairs;
  bool aborted = false;  // a loss went non-finite; the series is partial
};

// Reward-free test-time adaptation of the bundle in the target domain:
// prefill the buffer from the exploration policy, then per frame act once
// in the target environment (replay_bc: once in the source environment as
// well) and take inverse-dynamics gradient steps (replay_bc: plus the
// behaviour-cloning penalty on source observations). Interaction uses
// reward-stripped environments; rewards appear only in the diagnostics,
// which are computed on separate evaluation copies every diag_every frames
// against a matched-pair set fixed before the first update. steps == 0
// leaves the bundle bitwise unchanged and emits only the step-0 row.
MetricSeries adapt(AgentBundle& bundle, const SnapshotSet& snap,
                   const EnvConfig& source_cfg, const EnvConfig& target_cfg,
                   const VideoBank* bank, const AdaptConfig& cfg, Rng& rng);

}  // namespace adaptlab
