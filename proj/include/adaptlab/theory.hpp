#pragma once

#include <functional>
#include <limits>
#include <string>

#include "adaptlab/autodiff.hpp"

namespace adaptlab {

// KL(N(mu1, diag(var1)) || N(mu2, diag(var2))); variances must be strictly
// positive
double gaussian_kl(const VectorXd& mu1, const VectorXd& var1,
                   const VectorXd& mu2, const VectorXd& var2);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Monte Carlo cross-check of the closed form: samples from the first
// Gaussian and averages the log-density ratio
McEstimate gaussian_kl_mc(const VectorXd& mu1, const VectorXd& var1,
                          const VectorXd& mu2, const VectorXd& var2,
                          int n_samples, Rng& rng);

// 0.5 * (2 * d * k * eps + (k * eps)^2) / sigma2_min, valid whenever the
// policy mean and variance maps are both k-Lipschitz and every variance
// component stays at or above sigma2_min
double kl_upper_bound(int d, double k, double eps, double sigma2_min);

struct PropReport {
  std::string proposition;
  int trials = 0;
  int violations = 0;
  double max_slack = -std::numeric_limits<double>::infinity();
  double min_slack = std::numeric_limits<double>::infinity();
  std::string counterexample;  // first violating trial, empty when none
};

// fills mu (size d) and var (size d, each >= the sigma2_min handed to the
// verifier) for one embedding
using PolicyMap =
    std::function<void(const VectorXd& e, VectorXd& mu, VectorXd& var)>;

// scalar critic value at one embedding-action pair
using CriticMap = std::function<double(const VectorXd& e, const VectorXd& a)>;

// Checks KL(pi(.|e1) || pi(.|e2)) <= kl_upper_bound(d, k, |e1 - e2|, ...) on
// random embedding pairs spanning perturbation scales 1e-3 .. 2, and
// cross-checks the certificate itself: mean and variance shifts must stay
// within k * |e1 - e2|. Slack is bound minus observed KL.
PropReport verify_policy_kl_bound(const PolicyMap& policy, double k, int e_dim,
                                  int d, double sigma2_min, int n_trials,
                                  Rng& rng);

// Checks that the preference Q(e1, a1) vs Q(e1, a2) keeps its sign for every
// embedding sampled within radius_factor * gap / (2k) of e1. Slack is the
// surviving margin |gap at e2| - (gap at e1 - 2 k r) >= 0. A radius_factor
// above 1 turns this into a counterexample search beyond the certified
// radius.
PropReport verify_preference_radius(const CriticMap& q, double k, int e_dim,
                                    int a_dim, int n_trials, Rng& rng,
                                    double radius_factor = 0.99);

// Checks the certified radius never exceeds half the action gap:
// gap / (2k) <= |a1 - a2| / 2 + 1e-9. Slack is the difference.
PropReport verify_radius_action_gap(const CriticMap& q, double k, int e_dim,
                                    int a_dim, int n_trials, Rng& rng);

// certified Lipschitz constants of the post-bottleneck policy maps of an
// actor graph, over the bottleneck activation space
struct ActorLipschitz {
  double k_mean = 0.0;  // spectral product of the post-bottleneck dense stack
  double k_var = 0.0;   // k_mean * (hi - lo) * sigma_max^2 via the chain rule
};
ActorLipschitz actor_bottleneck_lipschitz(const ParamGraph& actor);

// Post-bottleneck slice of an actor graph as a PolicyMap over the bottleneck
// activation space; variances are floored at sigma2_min (the bounded log-std
// map already guarantees this up to rounding).
PolicyMap actor_policy_from_bottleneck(const ParamGraph& actor,
                                       double sigma2_min);

// Full concat-first critic as a CriticMap on raw (embedding, action) rows;
// only usable with lipschitz_upper(g, false) when the graph is free of
// layernorm.
CriticMap critic_map(const ParamGraph& critic);

// Post-bottleneck slice of a scalar head as a CriticMap over a formal
// [e; a] coordinate split of the bottleneck space (the preference-radius and
// action-gap statements hold for any k-Lipschitz map on a product space, so
// the split is a naming choice; e_dim + a_dim must equal the bottleneck
// width). Pair with lipschitz_upper(g, true).
CriticMap critic_from_bottleneck(const ParamGraph& critic);

}  // namespace adaptlab
