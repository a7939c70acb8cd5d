#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adaptlab/geometry.hpp"
#include "adaptlab/nets.hpp"
#include "adaptlab/theory.hpp"

using namespace adaptlab;

namespace {

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(Eigen::Index(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

MatrixXd random_matrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.gauss();
  return m;
}

// concat(e, a) followed by a dense/relu stack, certifiable end to end
ParamGraph fresh_critic(int e_dim, int a_dim, Rng& rng) {
  ParamGraph g;
  g.add_concat(e_dim, a_dim);
  g.add_dense(e_dim + a_dim, 16, rng, "q/d0");
  g.add_relu();
  g.add_dense(16, 16, rng, "q/d1");
  g.add_relu();
  g.add_dense(16, 1, rng, "q/d2");
  return g;
}

}  // namespace

TEST_CASE("gaussian kl oracles") {
  VectorXd mu = vec({0.4, -1.2});
  VectorXd var = vec({0.7, 2.2});
  CHECK(gaussian_kl(mu, var, mu, var) == 0.0);

  // one dimensional unit-variance shift: squared distance over two
  CHECK(gaussian_kl(vec({1.0}), vec({1.0}), vec({0.0}), vec({1.0})) == 0.5);

  // handpicked two-dimensional pair whose log-determinant terms cancel
  double kl = gaussian_kl(vec({0.0, 0.0}), vec({1.0, 2.0}), vec({1.0, -1.0}),
                          vec({2.0, 1.0}));
  CHECK(kl == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gaussian kl rejects bad inputs and stays nonnegative") {
  CHECK_THROWS(gaussian_kl(vec({0.0}), vec({0.0}), vec({0.0}), vec({1.0})));
  CHECK_THROWS(gaussian_kl(vec({0.0}), vec({1.0}), vec({0.0}), vec({-1.0})));
  CHECK_THROWS(gaussian_kl(vec({0.0, 1.0}), vec({1.0, 1.0}), vec({0.0}),
                           vec({1.0})));
  CHECK_THROWS(gaussian_kl(VectorXd(), VectorXd(), VectorXd(), VectorXd()));

  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    VectorXd m1 = random_matrix(3, 1, rng), m2 = random_matrix(3, 1, rng);
    VectorXd v1 = random_matrix(3, 1, rng).array().abs() + 0.1;
    VectorXd v2 = random_matrix(3, 1, rng).array().abs() + 0.1;
    CHECK(gaussian_kl(m1, v1, m2, v2) >= 0.0);
    CHECK(gaussian_kl(m1, v1, m2, v2) > 0.0);
  }
}

TEST_CASE("closed-form kl matches a monte carlo estimate") {
  Rng rng(2024);
  VectorXd m1 = vec({0.3, -0.8}), m2 = vec({-0.5, 0.4});
  VectorXd v1 = vec({0.6, 1.4}), v2 = vec({1.1, 0.5});
  const double closed = gaussian_kl(m1, v1, m2, v2);
  McEstimate mc = gaussian_kl_mc(m1, v1, m2, v2, 200000, rng);
  CHECK(mc.std_error > 0.0);
  CHECK(std::abs(closed - mc.value) <= 3.0 * mc.std_error);

  // widely separated one-dimensional pair
  const double closed1 = gaussian_kl(vec({3.0}), vec({0.2}), vec({-1.0}),
                                     vec({1.5}));
  McEstimate mc1 = gaussian_kl_mc(vec({3.0}), vec({0.2}), vec({-1.0}),
                                  vec({1.5}), 200000, rng);
  CHECK(std::abs(closed1 - mc1.value) <= 3.0 * mc1.std_error);
}

TEST_CASE("kl upper bound formula") {
  CHECK(kl_upper_bound(2, 1.0, 0.0, 0.25) == 0.0);
  CHECK(kl_upper_bound(2, 1.0, 0.1, 0.25) ==
        doctest::Approx(0.82).epsilon(1e-15));
  CHECK_THROWS(kl_upper_bound(0, 1.0, 0.1, 0.25));
  CHECK_THROWS(kl_upper_bound(2, -1.0, 0.1, 0.25));
  CHECK_THROWS(kl_upper_bound(2, 1.0, 0.1, 0.0));
}

TEST_CASE("kl upper bound grows sub-quadratically in eps and k") {
  for (int i = -6; i <= 3; ++i) {
    const double eps = std::pow(10.0, double(i));
    const double ratio =
        kl_upper_bound(3, 1.3, 2.0 * eps, 0.1) / kl_upper_bound(3, 1.3, eps, 0.1);
    CHECK(ratio > 2.0 - 1e-12);
    CHECK(ratio < 4.0);
  }
  for (int i = -3; i <= 3; ++i) {
    const double k = std::pow(10.0, double(i));
    const double ratio =
        kl_upper_bound(3, 2.0 * k, 0.7, 0.1) / kl_upper_bound(3, k, 0.7, 0.1);
    CHECK(ratio > 2.0 - 1e-12);
    CHECK(ratio < 4.0);
  }
}

TEST_CASE("policy kl bound holds on a linear-mean constant-variance policy") {
  Rng rng(31);
  const int e_dim = 4, d = 3;
  MatrixXd a = random_matrix(d, e_dim, rng);
  VectorXd var0 = vec({0.3, 0.5, 0.9});
  const double sigma2_min = 0.3;
  PolicyMap policy = [&](const VectorXd& e, VectorXd& mu, VectorXd& var) {
    mu = a * e;
    var = var0;
  };
  const double k = spectral_norm(a);
  PropReport r =
      verify_policy_kl_bound(policy, k, e_dim, d, sigma2_min, 2000, rng);
  CHECK(r.trials == 2000);
  CHECK(r.violations == 0);
  CHECK(r.counterexample.empty());
  CHECK(r.min_slack >= 0.0);
  CHECK(r.max_slack > r.min_slack);
}

TEST_CASE("policy kl bound verifier flags an understated constant") {
  Rng rng(32);
  MatrixXd a = MatrixXd::Zero(2, 2);
  a(0, 0) = 1.0;
  PolicyMap policy = [&](const VectorXd& e, VectorXd& mu, VectorXd& var) {
    mu = a * e;
    var = VectorXd::Constant(2, 0.5);
  };
  // true constant is 1; claiming 0.2 must trip the certificate cross-check
  PropReport r = verify_policy_kl_bound(policy, 0.2, 2, 2, 0.5, 100, rng);
  CHECK(r.violations > 0);
  CHECK(!r.counterexample.empty());
}

TEST_CASE("policy kl bound verifier rejects variances below the floor") {
  Rng rng(33);
  PolicyMap policy = [](const VectorXd&, VectorXd& mu, VectorXd& var) {
    mu = VectorXd::Zero(2);
    var = VectorXd::Constant(2, 1e-6);
  };
  CHECK_THROWS(verify_policy_kl_bound(policy, 1.0, 3, 2, 1e-4, 4, rng));
}

TEST_CASE("policy kl bound holds for the post-bottleneck actor policy") {
  Rng rng(34), trials(35);
  Dims d;
  ParamGraph actor = make_actor(d, rng, "f_a");
  ActorLipschitz lip = actor_bottleneck_lipschitz(actor);
  CHECK(lip.k_mean > 0.0);
  CHECK(lip.k_var > 0.0);
  PolicyMap policy = actor_policy_from_bottleneck(actor, kSigma2Min);
  const double k = std::max(lip.k_mean, lip.k_var);
  PropReport r = verify_policy_kl_bound(policy, k, d.bottleneck, d.act,
                                        kSigma2Min, 500, trials);
  CHECK(r.trials == 500);
  CHECK(r.violations == 0);
}

TEST_CASE("preference sign survives inside the certified radius") {
  Rng rng(41), trials(42);
  ParamGraph q = fresh_critic(4, 2, rng);
  const double k = lipschitz_upper(q, false);
  PropReport r =
      verify_preference_radius(critic_map(q), k, 4, 2, 2000, trials);
  CHECK(r.trials == 2000);
  CHECK(r.violations == 0);
  CHECK(r.counterexample.empty());
  CHECK(r.min_slack >= -1e-9);
}

TEST_CASE("preference radius at zero keeps the gap bitwise") {
  Rng rng(43), trials(44);
  ParamGraph q = fresh_critic(3, 2, rng);
  const double k = lipschitz_upper(q, false);
  PropReport r =
      verify_preference_radius(critic_map(q), k, 3, 2, 200, trials, 0.0);
  CHECK(r.violations == 0);
  CHECK(r.min_slack >= 0.0);
}

TEST_CASE("preference sign breaks beyond the certified radius") {
  // relu ramp critic: q(e, a) = relu(e + a) flattens for e below -a, so a
  // large enough embedding step erases the preference entirely
  Rng rng(45), trials(46);
  ParamGraph q;
  q.add_concat(1, 1);
  q.add_dense(2, 1, rng, "q/d0");
  q.add_relu();
  q.add_dense(1, 1, rng, "q/d1");
  q.param(0).values = MatrixXd::Ones(1, 2);
  q.param(1).values = MatrixXd::Zero(1, 1);
  q.param(2).values = MatrixXd::Ones(1, 1);
  q.param(3).values = MatrixXd::Zero(1, 1);
  const double k = lipschitz_upper(q, false);
  CHECK(k == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

  PropReport inside =
      verify_preference_radius(critic_map(q), k, 1, 1, 500, trials, 0.99);
  CHECK(inside.violations == 0);

  PropReport outside =
      verify_preference_radius(critic_map(q), k, 1, 1, 500, trials, 9.9);
  CHECK(outside.violations > 0);
  CHECK(!outside.counterexample.empty());
}

TEST_CASE("preference radius for the post-bottleneck critic slice") {
  Rng rng(47), trials(48);
  Dims d;
  ParamGraph critic = make_critic(d, rng, "f_c");
  const double k = lipschitz_upper(critic, true);
  CriticMap q = critic_from_bottleneck(critic);
  PropReport r = verify_preference_radius(q, k, 20, 12, 500, trials);
  CHECK(r.trials == 500);
  CHECK(r.violations == 0);
}

TEST_CASE("certified radius never exceeds half the action gap") {
  Rng rng(51), trials(52);
  ParamGraph q = fresh_critic(4, 2, rng);
  const double k = lipschitz_upper(q, false);
  PropReport r =
      verify_radius_action_gap(critic_map(q), k, 4, 2, 2000, trials);
  CHECK(r.trials == 2000);
  CHECK(r.violations == 0);
  CHECK(r.min_slack >= -1e-9);

  Dims d;
  ParamGraph critic = make_critic(d, rng, "f_c");
  PropReport rb = verify_radius_action_gap(critic_from_bottleneck(critic),
                                           lipschitz_upper(critic, true), 20,
                                           12, 500, trials);
  CHECK(rb.violations == 0);
}

TEST_CASE("action-projection critic achieves the radius cap") {
  Rng rng(53);
  const int e_dim = 3, a_dim = 2;
  VectorXd u(a_dim);
  u << 0.6, 0.8;  // unit vector
  ParamGraph q;
  q.add_concat(e_dim, a_dim);
  q.add_dense(e_dim + a_dim, 1, rng, "q/d0");
  MatrixXd w = MatrixXd::Zero(1, e_dim + a_dim);
  w.rightCols(a_dim) = u.transpose();
  q.param(0).values = w;
  q.param(1).values = MatrixXd::Zero(1, 1);

  const double k = lipschitz_upper(q, false);
  CHECK(k == doctest::Approx(1.0).epsilon(1e-9));

  CriticMap f = critic_map(q);
  const VectorXd e1 = random_matrix(e_dim, 1, rng);
  const VectorXd a1 = random_matrix(a_dim, 1, rng);
  for (double t : {0.05, 0.3, 1.1}) {
    const VectorXd a2 = a1 + t * u;
    const double gap = std::abs(f(e1, a1) - f(e1, a2));
    const double eps_a = (a1 - a2).norm();
    CHECK(std::abs(gap / (2.0 * k) - eps_a / 2.0) <= 1e-6);
  }
  // identical actions: zero radius against zero gap
  CHECK(f(e1, a1) - f(e1, a1) == 0.0);
}
