#pragma once

#include <cmath>

#include "adaptlab/autodiff.hpp"

namespace adaptlab {

struct Dims {
  int obs = 14;
  int act = 2;
  int emb = 50;
  int hidden = 128;
  int bottleneck = 32;
};

constexpr double kSigma2Min = 1e-4;
constexpr double kSigmaMax = 2.0;
// additive guard inside log(1 - a^2 + eps) of the tanh change of variables;
// gradients written against squashed_log_prob must use the same constant
constexpr double kSquashEps = 1e-6;

inline double log_std_lo() { return 0.5 * std::log(kSigma2Min); }
inline double log_std_hi() { return std::log(kSigmaMax); }

// encoder: obs -> hidden relu -> hidden relu -> emb
ParamGraph make_encoder(const Dims& d, Rng& rng, const std::string& prefix);

// every head shares one shape: dense -> layernorm -> tanh bottleneck ->
// 2x hidden relu -> output; the tanh activation index is recorded on the
// graph for diagnostics
ParamGraph make_head(int in, int out, const Dims& d, Rng& rng,
                     const std::string& prefix);

// actor: head(emb -> 2*act) + bounded log-std output map
ParamGraph make_actor(const Dims& d, Rng& rng, const std::string& prefix);
// critic: concat(emb, act) + head -> 1
ParamGraph make_critic(const Dims& d, Rng& rng, const std::string& prefix);
// inverse dynamics: concat(emb, emb) + head -> act
ParamGraph make_invdyn(const Dims& d, Rng& rng, const std::string& prefix);

struct DiagGaussian {
  MatrixXd mean;     // (B, D)
  MatrixXd log_std;  // (B, D), already inside [log_std_lo, log_std_hi]
};

// actor graph output is [mean, log_std] side by side
DiagGaussian split_gaussian(const MatrixXd& actor_out);

struct SquashedSample {
  MatrixXd pre_tanh;   // u = mean + std * eps
  MatrixXd action;     // tanh(u), strictly inside (-1, 1)
  MatrixXd eps;        // standard normal draws
  VectorXd log_prob;   // per row, includes the tanh change of variables
};

SquashedSample sample_squashed(const DiagGaussian& g, Rng& rng);

// log-density of the squashed sample given its eps draws (used for targets)
VectorXd squashed_log_prob(const DiagGaussian& g, const MatrixXd& eps,
                           const MatrixXd& action);

}  // namespace adaptlab
