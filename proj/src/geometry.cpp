#include "adaptlab/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace adaptlab {

double distance(Metric m, const VectorXd& u, const VectorXd& v) {
  if (u.size() != v.size())
    throw std::invalid_argument("distance: dimension mismatch");
  if (u.size() == 0) throw std::invalid_argument("distance: empty vectors");
  switch (m) {
    case Metric::cosine: {
      const double nu = u.norm(), nv = v.norm();
      if (nu == 0.0 || nv == 0.0)
        throw std::invalid_argument("distance: cosine needs nonzero vectors");
      return 1.0 - u.dot(v) / (nu * nv);
    }
    case Metric::mse:
      return (u - v).squaredNorm() / double(u.size());
  }
  throw std::logic_error("distance: unknown metric");
}

CurveStat matched_distance(const MatrixXd& emb_a, const MatrixXd& emb_b,
                           Metric m) {
  if (emb_a.rows() != emb_b.rows() || emb_a.cols() != emb_b.cols())
    throw std::invalid_argument("matched_distance: shape mismatch");
  const Eigen::Index n = emb_a.rows();
  if (n == 0) throw std::invalid_argument("matched_distance: empty batch");
  VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d(i) = distance(m, emb_a.row(i).transpose(), emb_b.row(i).transpose());
  CurveStat s;
  s.mean = d.mean();
  if (n > 1) {
    const double var = (d.array() - s.mean).square().sum() / double(n - 1);
    s.std_of_mean = std::sqrt(var / double(n));
  }
  return s;
}

double forgetting_distance(const MatrixXd& obs, const Embedder& current,
                           const Embedder& snapshot, Metric m) {
  return matched_distance(current(obs), snapshot(obs), m).mean;
}

std::vector<TriangleRow> triangle_decomposition(const MatrixXd& obs_source,
                                                const MatrixXd& obs_target,
                                                const Embedder& current,
                                                const Embedder& snapshot) {
  if (obs_source.rows() != obs_target.rows())
    throw std::invalid_argument("triangle_decomposition: row mismatch");
  const MatrixXd f_s = current(obs_source);
  const MatrixXd f_t = current(obs_target);
  const MatrixXd g_s = snapshot(obs_source);
  std::vector<TriangleRow> rows(size_t(obs_source.rows()));
  for (Eigen::Index i = 0; i < obs_source.rows(); ++i) {
    rows[size_t(i)].cross = (f_t.row(i) - g_s.row(i)).norm();
    rows[size_t(i)].forget = (f_s.row(i) - g_s.row(i)).norm();
    rows[size_t(i)].align = (f_t.row(i) - f_s.row(i)).norm();
  }
  return rows;
}

double spectral_norm(const MatrixXd& a, double tol, int max_iters) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Rng rng(0x5bd1e995u);
  VectorXd v(a.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.gauss();
  v.normalize();
  // The estimates converge geometrically from below, so the remaining error
  // is about delta * rho / (1 - rho) with rho the observed step ratio; a raw
  // step threshold would stop far too early near degenerate top pairs.
  double s = -1.0, delta_prev = -1.0;
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd w = a * v;
    const double s_new = w.norm();
    if (s_new == 0.0) return 0.0;
    const VectorXd z = a.transpose() * (w / s_new);
    const double zn = z.norm();
    if (zn == 0.0) return s_new;
    v = z / zn;
    if (s >= 0.0) {
      const double delta = std::abs(s_new - s);
      if (delta <= 1e-15 * s_new) return s_new;
      if (delta_prev > 0.0) {
        const double rho = std::min(delta / delta_prev, 0.9999);
        if (delta * rho / (1.0 - rho) <= tol * s_new) return s_new;
      }
      delta_prev = delta;
    }
    s = s_new;
  }
  return s;
}

double lipschitz_upper(const ParamGraph& g, bool from_bottleneck) {
  int start = 0;
  if (from_bottleneck) {
    if (g.bottleneck_act < 0)
      throw std::invalid_argument("lipschitz_upper: graph has no bottleneck");
    start = g.bottleneck_act;
  }
  double product = 1.0;
  const auto& layers = g.layers();
  for (int i = start; i < int(layers.size()); ++i) {
    const LayerSpec& l = layers[size_t(i)];
    switch (l.kind) {
      case LayerKind::dense:
        product *= spectral_norm(g.param(l.w).values);
        break;
      case LayerKind::relu:
      case LayerKind::tanh_:
      case LayerKind::concat:
        break;
      case LayerKind::layernorm:
        throw std::invalid_argument(
            "lipschitz_upper: layernorm has no unit Lipschitz certificate");
      case LayerKind::gaussian_head:
        if (i != int(layers.size()) - 1)
          throw std::invalid_argument(
              "lipschitz_upper: bounded log-std map must be terminal");
        break;  // certificate covers the raw outputs feeding the map
    }
  }
  return product;
}

double lipschitz_empirical(
    const std::function<MatrixXd(const MatrixXd&)>& f,
    const std::function<MatrixXd(int)>& sample, int n_pairs, Rng& rng,
    double eps) {
  if (n_pairs < 2)
    throw std::invalid_argument("lipschitz_empirical: need at least 2 pairs");
  double best = 0.0;
  auto scan = [&](const MatrixXd& x1, const MatrixXd& x2) {
    const MatrixXd f1 = f(x1), f2 = f(x2);
    for (Eigen::Index i = 0; i < x1.rows(); ++i) {
      const double dx = (x1.row(i) - x2.row(i)).norm();
      if (dx == 0.0) continue;
      best = std::max(best, (f1.row(i) - f2.row(i)).norm() / dx);
    }
  };
  const int n_global = n_pairs / 2;
  const int n_local = n_pairs - n_global;
  {
    const MatrixXd x1 = sample(n_global);
    const MatrixXd x2 = sample(n_global);
    scan(x1, x2);
  }
  {
    const MatrixXd x1 = sample(n_local);
    MatrixXd dir(x1.rows(), x1.cols());
    for (Eigen::Index i = 0; i < dir.rows(); ++i) {
      for (Eigen::Index j = 0; j < dir.cols(); ++j) dir(i, j) = rng.gauss();
      const double n = dir.row(i).norm();
      if (n > 0.0) dir.row(i) /= n;
    }
    scan(x1, x1 + eps * dir);
  }
  return best;
}

}  // namespace adaptlab
