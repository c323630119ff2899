#include <cmath>
#include <vector>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/error.hpp"

namespace cnorm {
namespace {

using Index = std::ptrdiff_t;

// weighted_moments over the components that received any responsibility;
// empty components keep the mixture's own mean and variance (their posterior
// weight is zero, so the value never reaches the output).
WeightedMoments batch_moments(const Tensor& points, const Tensor& post, const GmmParams& gmm) {
  const std::size_t n = post.dim(0), k = post.dim(1), d = points.dim(1);
  std::vector<std::size_t> live;
  for (std::size_t j = 0; j < k; ++j) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += post.at(i, j);
    if (mass > 0.0) live.push_back(j);
  }
  if (live.size() == k) return weighted_moments(points, post);

  Tensor sub({n, live.size()});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < live.size(); ++a) sub.at(i, a) = post.at(i, live[a]);
  const WeightedMoments part = weighted_moments(points, sub);
  WeightedMoments m{gmm.means, gmm.vars};
  for (std::size_t a = 0; a < live.size(); ++a)
    for (std::size_t t = 0; t < d; ++t) {
      m.mean.at(live[a], t) = part.mean.at(a, t);
      m.var.at(live[a], t) = part.var.at(a, t);
    }
  return m;
}

}  // namespace

MixNormState MixNormState::create(std::size_t components, std::size_t channels) {
  if (components == 0) throw ConfigError("MixNorm: K must be >= 1");
  MixNormState s{Tensor({channels}, 1.0), Tensor({channels}, 0.0),
                 GmmParams{Tensor({components}, 1.0 / static_cast<double>(components)),
                           Tensor({components, channels}, 0.0), Tensor({components, channels}, 1.0)},
                 Tensor({components, channels}, 0.0), Tensor({components, channels}, 1.0)};
  return s;
}

Tensor positions_matrix(const Tensor& x) {
  require_rank(x, 3, "positions_matrix");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor p({n * l, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t t = 0; t < l; ++t) p.at(i * l + t, ci) = x.at(i, ci, t);
  return p;
}

Tensor from_positions(const Tensor& p, const Shape& shape) {
  const std::size_t n = shape[0], c = shape[1], l = shape[2];
  Tensor x(shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t t = 0; t < l; ++t) x.at(i, ci, t) = p.at(i * l + t, ci);
  return x;
}

MixNormForward mixnorm_forward_frozen(const Tensor& x, const Tensor& post, const Tensor& weights,
                                      const Tensor& mean, const Tensor& var, const Tensor& gamma,
                                      const Tensor& beta, double eps) {
  require_rank(x, 3, "mixnorm_forward");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = weights.size();
  require_shape(post, {n * l, k}, "mixnorm_forward posteriors");
  require_shape(mean, {k, c}, "mixnorm_forward mean");
  require_shape(var, {k, c}, "mixnorm_forward var");
  for (std::size_t j = 0; j < k; ++j)
    if (!(weights[j] > 0.0)) throw MixtureError("mixnorm_forward: mixture weight " + std::to_string(j) + " is not positive");

  // coef[k, c] = 1 / (sqrt(lambda_k) sqrt(var_kc + eps))
  Tensor coef({k, c});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t ci = 0; ci < c; ++ci)
      coef.at(j, ci) = 1.0 / (std::sqrt(weights[j]) * std::sqrt(var.at(j, ci) + eps));

  MixNormForward out{Tensor(x.shape()), MixNormCache{post, mean, var, Tensor({n * l, c}), Tensor(x.shape()), gamma}};
  MixNormCache& cache = out.cache;
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (std::size_t t = 0; t < l; ++t) {
      const std::size_t row = i * l + t;
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double v = x.at(i, ci, t);
        double h = 0.0, s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double w = post.at(row, j) * coef.at(j, ci);
          h += w * (v - mean.at(j, ci));
          s += w;
        }
        cache.scale.at(row, ci) = s;
        cache.xhat.at(i, ci, t) = h;
        out.y.at(i, ci, t) = gamma[ci] * h + beta[ci];
      }
    }
  return out;
}

MixNormForward mixnorm_forward(const Tensor& x, const GmmParams& gmm, const Tensor& gamma,
                               const Tensor& beta, double eps) {
  require_rank(x, 3, "mixnorm_forward");
  for (std::size_t j = 0; j < gmm.components(); ++j)
    if (!(gmm.weights[j] > 0.0)) throw MixtureError("mixnorm_forward: zero mixture weight");
  gmm.validate();
  const Tensor points = positions_matrix(x);
  Tensor post = posteriors(points, gmm);
  WeightedMoments m = batch_moments(points, post, gmm);
  return mixnorm_forward_frozen(x, post, gmm.weights, m.mean, m.var, gamma, beta, eps);
}

void mixnorm_update_running(MixNormState& state, const Tensor& mean, const Tensor& var) {
  require_shape(mean, state.running_mean.shape(), "mixnorm_update_running");
  require_shape(var, state.running_var.shape(), "mixnorm_update_running");
  const double a = state.momentum;
  for (std::size_t e = 0; e < mean.size(); ++e) {
    state.running_mean[e] = a * state.running_mean[e] + (1.0 - a) * mean[e];
    state.running_var[e] = a * state.running_var[e] + (1.0 - a) * var[e];
  }
  state.initialized = true;
}

Tensor mixnorm_forward_eval(const Tensor& x, const MixNormState& state) {
  if (!state.fitted || !state.initialized)
    throw StateError("mixnorm_forward_eval: mixture or running moments not populated");
  const Tensor post = posteriors(positions_matrix(x), state.gmm);
  return mixnorm_forward_frozen(x, post, state.gmm.weights, state.running_mean, state.running_var,
                                state.gamma, state.beta, state.eps)
      .y;
}

BnGrads mixnorm_backward(const MixNormCache& cache, const Tensor& dy) {
  require_shape(dy, cache.xhat.shape(), "mixnorm_backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), l = dy.dim(2);
  BnGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t t = 0; t < l; ++t) {
        const double d = dy.at(i, ci, t);
        g.dx.at(i, ci, t) = d * cache.gamma[ci] * cache.scale.at(i * l + t, ci);
        g.dgamma[ci] += d * cache.xhat.at(i, ci, t);
        g.dbeta[ci] += d;
      }
  return g;
}

}  // namespace cnorm
