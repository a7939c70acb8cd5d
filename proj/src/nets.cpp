#include "adaptlab/nets.hpp"

#include <stdexcept>

namespace adaptlab {

ParamGraph make_encoder(const Dims& d, Rng& rng, const std::string& prefix) {
  ParamGraph g;
  g.add_dense(d.obs, d.hidden, rng, prefix + "/d0");
  g.add_relu();
  g.add_dense(d.hidden, d.hidden, rng, prefix + "/d1");
  g.add_relu();
  g.add_dense(d.hidden, d.emb, rng, prefix + "/d2");
  return g;
}

namespace {

// appends the shared head stack to a graph whose last activation has width
// `in`, and records the tanh bottleneck activation index
void append_head(ParamGraph& g, int in, int out, const Dims& d, Rng& rng,
                 const std::string& prefix) {
  g.add_dense(in, d.bottleneck, rng, prefix + "/d0");
  g.add_layernorm(prefix + "/ln");
  g.add_tanh();
  g.bottleneck_act = g.n_layers();
  g.add_dense(d.bottleneck, d.hidden, rng, prefix + "/d1");
  g.add_relu();
  g.add_dense(d.hidden, d.hidden, rng, prefix + "/d2");
  g.add_relu();
  g.add_dense(d.hidden, out, rng, prefix + "/d3");
}

}  // namespace

ParamGraph make_head(int in, int out, const Dims& d, Rng& rng,
                     const std::string& prefix) {
  ParamGraph g;
  append_head(g, in, out, d, rng, prefix);
  return g;
}

ParamGraph make_actor(const Dims& d, Rng& rng, const std::string& prefix) {
  ParamGraph g = make_head(d.emb, 2 * d.act, d, rng, prefix);
  g.add_gaussian_head(d.act, log_std_lo(), log_std_hi());
  return g;
}

ParamGraph make_critic(const Dims& d, Rng& rng, const std::string& prefix) {
  ParamGraph g;
  g.add_concat(d.emb, d.act);
  append_head(g, d.emb + d.act, 1, d, rng, prefix);
  return g;
}

ParamGraph make_invdyn(const Dims& d, Rng& rng, const std::string& prefix) {
  ParamGraph g;
  g.add_concat(d.emb, d.emb);
  append_head(g, 2 * d.emb, d.act, d, rng, prefix);
  return g;
}

DiagGaussian split_gaussian(const MatrixXd& actor_out) {
  const Eigen::Index d = actor_out.cols() / 2;
  if (actor_out.cols() != 2 * d)
    throw std::invalid_argument("split_gaussian: odd output width");
  DiagGaussian g;
  g.mean = actor_out.leftCols(d);
  g.log_std = actor_out.rightCols(d);
  return g;
}

SquashedSample sample_squashed(const DiagGaussian& g, Rng& rng) {
  SquashedSample s;
  s.eps.resize(g.mean.rows(), g.mean.cols());
  for (Eigen::Index i = 0; i < s.eps.rows(); ++i)
    for (Eigen::Index j = 0; j < s.eps.cols(); ++j) s.eps(i, j) = rng.gauss();
  s.pre_tanh = g.mean + g.log_std.array().exp().matrix().cwiseProduct(s.eps);
  s.action = s.pre_tanh.array().tanh();
  s.log_prob = squashed_log_prob(g, s.eps, s.action);
  return s;
}

VectorXd squashed_log_prob(const DiagGaussian& g, const MatrixXd& eps,
                           const MatrixXd& action) {
  const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
  Eigen::ArrayXXd base = -half_log_2pi - g.log_std.array() -
                         0.5 * eps.array().square();
  Eigen::ArrayXXd squash = (1.0 - action.array().square() + kSquashEps).log();
  return (base - squash).rowwise().sum().matrix();
}

}  // namespace adaptlab
