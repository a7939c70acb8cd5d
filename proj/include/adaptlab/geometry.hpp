#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adaptlab/autodiff.hpp"

namespace adaptlab {

enum class Metric { cosine, mse };

// cosine: 1 - <u,v> / (|u||v|), rejecting zero vectors. mse: |u - v|^2 / dim.
double distance(Metric m, const VectorXd& u, const VectorXd& v);

// maps a batch of observations (rows) to a batch of embeddings (rows)
using Embedder = std::function<MatrixXd(const MatrixXd&)>;

struct CurveStat {
  double mean = 0.0;
  double std_of_mean = 0.0;  // sample std / sqrt(n); 0 for n <= 1
};

// per-row distance between two embedded batches, aggregated
CurveStat matched_distance(const MatrixXd& emb_a, const MatrixXd& emb_b,
                           Metric m);

// mean distance between two encoders' embeddings of one observation set
double forgetting_distance(const MatrixXd& obs, const Embedder& current,
                           const Embedder& snapshot, Metric m);

struct TriangleRow {
  double cross = 0.0;   // |f(o_t) - g(o_s)|
  double forget = 0.0;  // |f(o_s) - g(o_s)|
  double align = 0.0;   // |f(o_t) - f(o_s)|
};

// Euclidean edge lengths per matched pair; cross <= forget + align holds for
// every row up to floating-point slack
std::vector<TriangleRow> triangle_decomposition(const MatrixXd& obs_source,
                                                const MatrixXd& obs_target,
                                                const Embedder& current,
                                                const Embedder& snapshot);

// Largest singular value by power iteration on A^T A. Deterministic start
// vector; stops once the geometric-tail estimate of the remaining error
// drops below tol relative, or after max_iters rounds.
double spectral_norm(const MatrixXd& a, double tol = 1e-6,
                     int max_iters = 20000);

// Product of dense-layer spectral norms over the graph (from_bottleneck:
// only layers after the tanh bottleneck). relu/tanh/concat contribute factor
// one; layernorm inside the covered range is rejected because its gain is not
// bounded by one. A trailing bounded log-std output map is excluded from the
// product: it reparameterises the raw output, so the certificate applies to
// the raw pre-map outputs (and any coordinate slice of them).
double lipschitz_upper(const ParamGraph& g, bool from_bottleneck);

// Max of |f(x) - f(y)| / |x - y| over sampled pairs: half drawn independently
// from `sample` (rows of a (n, dim) matrix), half as eps-perturbations of a
// single draw along random directions.
double lipschitz_empirical(
    const std::function<MatrixXd(const MatrixXd&)>& f,
    const std::function<MatrixXd(int)>& sample, int n_pairs, Rng& rng,
    double eps = 1e-3);

}  // namespace adaptlab
