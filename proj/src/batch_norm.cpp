#include <cmath>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/error.hpp"

namespace cnorm {
namespace {

using Index = std::ptrdiff_t;

void check_activation(const Tensor& x, std::size_t channels, const char* what) {
  require_rank(x, 3, what);
  if (x.dim(1) != channels)
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, layer expects " + std::to_string(channels));
}

}  // namespace

BnState BnState::create(std::size_t channels) {
  return BnState{Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0),
                 Tensor({channels}, 1.0)};
}

BnForward bn_forward_train(const Tensor& x, const BnState& state) {
  check_activation(x, state.channels(), "bn_forward_train");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  if (n * l < 2) throw DegenerateError("bn_forward_train: need at least 2 values per channel");

  Moments m = channel_moments(x);
  BnForward out{Tensor(x.shape()), BnCache{Tensor(x.shape()), std::move(m.mean), std::move(m.var),
                                           Tensor({c}), state.gamma}};
  BnCache& cache = out.cache;
  for (std::size_t ci = 0; ci < c; ++ci) cache.inv_std[ci] = 1.0 / std::sqrt(cache.var[ci] + state.eps);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      const std::size_t base = (i * c + ci) * l;
      const double mu = cache.mean[ci], is = cache.inv_std[ci];
      const double g = state.gamma[ci], b = state.beta[ci];
      for (std::size_t j = 0; j < l; ++j) {
        const double h = (x[base + j] - mu) * is;
        cache.xhat[base + j] = h;
        out.y[base + j] = g * h + b;
      }
    }
  return out;
}

void bn_update_running(BnState& state, const Tensor& batch_mean, const Tensor& batch_var) {
  require_shape(batch_mean, state.running_mean.shape(), "bn_update_running");
  require_shape(batch_var, state.running_var.shape(), "bn_update_running");
  const double a = state.momentum;
  for (std::size_t c = 0; c < batch_mean.size(); ++c) {
    state.running_mean[c] = a * state.running_mean[c] + (1.0 - a) * batch_mean[c];
    state.running_var[c] = a * state.running_var[c] + (1.0 - a) * batch_var[c];
  }
  state.initialized = true;
}

Tensor bn_forward_eval(const Tensor& x, const BnState& state) {
  check_activation(x, state.channels(), "bn_forward_eval");
  if (!state.initialized) throw StateError("bn_forward_eval: running statistics never updated");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      const std::size_t base = (i * c + ci) * l;
      const double scale = state.gamma[ci] / std::sqrt(state.running_var[ci] + state.eps);
      for (std::size_t j = 0; j < l; ++j)
        y[base + j] = scale * (x[base + j] - state.running_mean[ci]) + state.beta[ci];
    }
  return y;
}

BnGrads bn_backward(const BnCache& cache, const Tensor& dy) {
  require_shape(dy, cache.xhat.shape(), "bn_backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), l = dy.dim(2);
  const double m = static_cast<double>(n * l);
  BnGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
    double sum_dy = 0.0, sum_dy_h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ci) * l;
      for (std::size_t j = 0; j < l; ++j) {
        sum_dy += dy[base + j];
        sum_dy_h += dy[base + j] * cache.xhat[base + j];
      }
    }
    g.dgamma[ci] = sum_dy_h;
    g.dbeta[ci] = sum_dy;
    const double k = cache.gamma[ci] * cache.inv_std[ci] / m;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ci) * l;
      for (std::size_t j = 0; j < l; ++j)
        g.dx[base + j] = k * (m * dy[base + j] - sum_dy - cache.xhat[base + j] * sum_dy_h);
    }
  }
  return g;
}

LnForward ln_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_activation(x, gamma.size(), "ln_forward");
  require_shape(beta, gamma.shape(), "ln_forward");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), per = c * l;
  if (per < 2) throw DegenerateError("ln_forward: need at least 2 values per sample");

  LnForward out{Tensor(x.shape()), LnCache{Tensor(x.shape()), Tensor({n}), gamma}};
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* xi = x.data() + i * per;
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += xi[j];
    const double mu = s / static_cast<double>(per);
    double q = 0.0;
    for (std::size_t j = 0; j < per; ++j) q += (xi[j] - mu) * (xi[j] - mu);
    const double is = 1.0 / std::sqrt(q / static_cast<double>(per) + eps);
    out.cache.inv_std[i] = is;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < l; ++j) {
        const std::size_t at = i * per + ci * l + j;
        const double h = (x[at] - mu) * is;
        out.cache.xhat[at] = h;
        out.y[at] = gamma[ci] * h + beta[ci];
      }
  }
  return out;
}

BnGrads ln_backward(const LnCache& cache, const Tensor& dy) {
  require_shape(dy, cache.xhat.shape(), "ln_backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), l = dy.dim(2), per = c * l;
  const double m = static_cast<double>(per);
  BnGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double sum_d = 0.0, sum_dh = 0.0;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < l; ++j) {
        const std::size_t at = i * per + ci * l + j;
        const double d = dy[at] * cache.gamma[ci];
        sum_d += d;
        sum_dh += d * cache.xhat[at];
      }
    const double k = cache.inv_std[i] / m;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < l; ++j) {
        const std::size_t at = i * per + ci * l + j;
        g.dx[at] = k * (m * dy[at] * cache.gamma[ci] - sum_d - cache.xhat[at] * sum_dh);
      }
  }
  for (std::size_t ci = 0; ci < c; ++ci) {
    double sg = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < l; ++j) {
        const std::size_t at = i * per + ci * l + j;
        sg += dy[at] * cache.xhat[at];
        sb += dy[at];
      }
    g.dgamma[ci] = sg;
    g.dbeta[ci] = sb;
  }
  return g;
}

}  // namespace cnorm
