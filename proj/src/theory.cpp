#include "adaptlab/theory.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "adaptlab/geometry.hpp"

namespace adaptlab {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

VectorXd gauss_vec(int n, Rng& rng) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.gauss();
  return v;
}

VectorXd unit_direction(int n, Rng& rng) {
  for (;;) {
    VectorXd v = gauss_vec(n, rng);
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

VectorXd uniform_ball(int n, double radius, Rng& rng) {
  const double r = radius * std::pow(rng.uniform(), 1.0 / double(n));
  return r * unit_direction(n, rng);
}

VectorXd uniform_box(int n, Rng& rng) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
  return v;
}

void record_slack(PropReport& r, double slack) {
  r.max_slack = std::max(r.max_slack, slack);
  r.min_slack = std::min(r.min_slack, slack);
}

std::string describe(std::initializer_list<std::pair<const char*, double>> kv) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& [k, v] : kv) {
    if (!first) os << " ";
    os << k << "=" << v;
    first = false;
  }
  return os.str();
}

}  // namespace

double gaussian_kl(const VectorXd& mu1, const VectorXd& var1,
                   const VectorXd& mu2, const VectorXd& var2) {
  require(mu1.size() == var1.size() && mu2.size() == var2.size() &&
              mu1.size() == mu2.size(),
          "gaussian_kl: dimension mismatch");
  require(mu1.size() > 0, "gaussian_kl: empty distribution");
  require((var1.array() > 0.0).all() && (var2.array() > 0.0).all(),
          "gaussian_kl: variances must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu1.size(); ++i) {
    const double dm = mu2(i) - mu1(i);
    kl += 0.5 * (std::log(var2(i) / var1(i)) - 1.0 + var1(i) / var2(i) +
                 dm * dm / var2(i));
  }
  return kl;
}

McEstimate gaussian_kl_mc(const VectorXd& mu1, const VectorXd& var1,
                          const VectorXd& mu2, const VectorXd& var2,
                          int n_samples, Rng& rng) {
  require(n_samples > 1, "gaussian_kl_mc: need at least 2 samples");
  require((var1.array() > 0.0).all() && (var2.array() > 0.0).all(),
          "gaussian_kl_mc: variances must be positive");
  const VectorXd std1 = var1.array().sqrt();
  // constant part of log p1 - log p2 for a shared sample point
  const double log_det_term =
      0.5 * (var2.array().log().sum() - var1.array().log().sum());
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    double quad = log_det_term;
    for (Eigen::Index i = 0; i < mu1.size(); ++i) {
      const double x = mu1(i) + std1(i) * rng.gauss();
      const double d1 = x - mu1(i), d2 = x - mu2(i);
      quad += 0.5 * (d2 * d2 / var2(i) - d1 * d1 / var1(i));
    }
    sum += quad;
    sum_sq += quad * quad;
  }
  McEstimate est;
  est.value = sum / double(n_samples);
  const double var =
      (sum_sq - sum * sum / double(n_samples)) / double(n_samples - 1);
  est.std_error = std::sqrt(std::max(0.0, var) / double(n_samples));
  return est;
}

double kl_upper_bound(int d, double k, double eps, double sigma2_min) {
  require(d >= 1, "kl_upper_bound: dimension must be >= 1");
  require(k >= 0.0 && eps >= 0.0, "kl_upper_bound: k and eps must be >= 0");
  require(sigma2_min > 0.0, "kl_upper_bound: sigma2_min must be positive");
  const double ke = k * eps;
  return 0.5 * (2.0 * double(d) * ke + ke * ke) / sigma2_min;
}

PropReport verify_policy_kl_bound(const PolicyMap& policy, double k, int e_dim,
                                  int d, double sigma2_min, int n_trials,
                                  Rng& rng) {
  require(k >= 0.0, "verify_policy_kl_bound: negative k");
  PropReport r;
  r.proposition = "policy_kl_bound";
  VectorXd mu1(d), var1(d), mu2(d), var2(d);
  for (int t = 0; t < n_trials; ++t) {
    const VectorXd e1 = gauss_vec(e_dim, rng);
    const double eps_nominal = std::pow(10.0, rng.uniform(-3.0, 0.301));
    const VectorXd e2 = e1 + eps_nominal * unit_direction(e_dim, rng);
    const double eps = (e1 - e2).norm();
    policy(e1, mu1, var1);
    policy(e2, mu2, var2);
    require(mu1.size() == d && var1.size() == d,
            "verify_policy_kl_bound: policy output dimension mismatch");
    require(var1.minCoeff() >= sigma2_min && var2.minCoeff() >= sigma2_min,
            "verify_policy_kl_bound: variance below the declared floor");
    const double delta =
        std::max((mu1 - mu2).norm(), (var1 - var2).norm());
    const double kl = gaussian_kl(mu1, var1, mu2, var2);
    const double bound = kl_upper_bound(d, k, eps, sigma2_min);
    const double slack = bound - kl;
    record_slack(r, slack);
    ++r.trials;
    const bool lipschitz_ok = delta <= k * eps * (1.0 + 1e-9) + 1e-12;
    if (kl > bound || !lipschitz_ok) {
      ++r.violations;
      if (r.counterexample.empty())
        r.counterexample = describe(
            {{"eps", eps}, {"kl", kl}, {"bound", bound}, {"delta", delta},
             {"k_eps", k * eps}});
    }
  }
  return r;
}

PropReport verify_preference_radius(const CriticMap& q, double k, int e_dim,
                                    int a_dim, int n_trials, Rng& rng,
                                    double radius_factor) {
  require(k > 0.0, "verify_preference_radius: k must be positive");
  require(radius_factor >= 0.0, "verify_preference_radius: bad radius factor");
  PropReport r;
  r.proposition = "preference_radius";
  for (int t = 0; t < n_trials; ++t) {
    const VectorXd e1 = gauss_vec(e_dim, rng);
    VectorXd a1, a2;
    double gap1 = 0.0;
    bool found = false;
    for (int attempt = 0; attempt < 64; ++attempt) {
      a1 = uniform_box(a_dim, rng);
      a2 = uniform_box(a_dim, rng);
      gap1 = q(e1, a1) - q(e1, a2);
      if (std::abs(gap1) >= 1e-9) {
        found = true;
        break;
      }
    }
    if (!found) continue;  // degenerate critic near this embedding
    const double radius = radius_factor * std::abs(gap1) / (2.0 * k);
    const VectorXd e2 = e1 + uniform_ball(e_dim, radius, rng);
    const double gap2 = q(e2, a1) - q(e2, a2);
    const bool preserved = gap2 != 0.0 && std::signbit(gap2) == std::signbit(gap1);
    record_slack(r, std::abs(gap2) - (std::abs(gap1) - 2.0 * k * radius));
    ++r.trials;
    if (!preserved) {
      ++r.violations;
      if (r.counterexample.empty())
        r.counterexample = describe(
            {{"gap1", gap1}, {"gap2", gap2}, {"radius", radius}, {"k", k}});
    }
  }
  return r;
}

PropReport verify_radius_action_gap(const CriticMap& q, double k, int e_dim,
                                    int a_dim, int n_trials, Rng& rng) {
  require(k > 0.0, "verify_radius_action_gap: k must be positive");
  PropReport r;
  r.proposition = "radius_action_gap";
  for (int t = 0; t < n_trials; ++t) {
    const VectorXd e1 = gauss_vec(e_dim, rng);
    const VectorXd a1 = uniform_box(a_dim, rng);
    const VectorXd a2 = uniform_box(a_dim, rng);
    const double gap = std::abs(q(e1, a1) - q(e1, a2));
    const double eps_a = (a1 - a2).norm();
    const double slack = eps_a / 2.0 - gap / (2.0 * k);
    record_slack(r, slack);
    ++r.trials;
    if (slack < -1e-9) {
      ++r.violations;
      if (r.counterexample.empty())
        r.counterexample = describe(
            {{"gap", gap}, {"eps_a", eps_a}, {"k", k}, {"slack", slack}});
    }
  }
  return r;
}

ActorLipschitz actor_bottleneck_lipschitz(const ParamGraph& actor) {
  require(!actor.layers().empty() &&
              actor.layers().back().kind == LayerKind::gaussian_head,
          "actor_bottleneck_lipschitz: graph lacks a bounded log-std head");
  const LayerSpec& head = actor.layers().back();
  ActorLipschitz out;
  out.k_mean = lipschitz_upper(actor, true);
  // variance = exp(2 * squash(raw)); |d variance / d raw| is at most
  // sigma_max^2 * (hi - lo), and the squashed channels are coordinate-wise
  const double sigma2_max = std::exp(2.0 * head.hi);
  out.k_var = out.k_mean * (head.hi - head.lo) * sigma2_max;
  return out;
}

PolicyMap actor_policy_from_bottleneck(const ParamGraph& actor,
                                       double sigma2_min) {
  require(actor.bottleneck_act >= 0,
          "actor_policy_from_bottleneck: graph has no bottleneck");
  require(!actor.layers().empty() &&
              actor.layers().back().kind == LayerKind::gaussian_head,
          "actor_policy_from_bottleneck: graph lacks a bounded log-std head");
  const ParamGraph* g = &actor;
  return [g, sigma2_min](const VectorXd& e, VectorXd& mu, VectorXd& var) {
    Tape tape;
    const MatrixXd out = g->forward_from(g->bottleneck_act, e.transpose(), tape);
    const Eigen::Index d = out.cols() / 2;
    mu = out.row(0).head(d).transpose();
    Eigen::ArrayXd log_std = out.row(0).tail(d).transpose().array();
    var = (2.0 * log_std).exp().max(sigma2_min).matrix();
  };
}

CriticMap critic_map(const ParamGraph& critic) {
  require(!critic.layers().empty() &&
              critic.layers().front().kind == LayerKind::concat,
          "critic_map: graph must start with a concat layer");
  require(critic.out_dim() == 1, "critic_map: output must be scalar");
  const ParamGraph* g = &critic;
  return [g](const VectorXd& e, const VectorXd& a) {
    Tape tape;
    return g->forward2(e.transpose(), a.transpose(), tape)(0, 0);
  };
}

CriticMap critic_from_bottleneck(const ParamGraph& critic) {
  require(critic.bottleneck_act >= 0,
          "critic_from_bottleneck: graph has no bottleneck");
  require(critic.out_dim() == 1, "critic_from_bottleneck: output must be scalar");
  const ParamGraph* g = &critic;
  return [g](const VectorXd& e, const VectorXd& a) {
    VectorXd x(e.size() + a.size());
    x << e, a;
    Tape tape;
    return g->forward_from(g->bottleneck_act, x.transpose(), tape)(0, 0);
  };
}

}  // namespace adaptlab
