#include <algorithm>
#include <cmath>
#include <vector>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/error.hpp"

namespace cnorm {
namespace {

using Index = std::ptrdiff_t;

// Per-sample channel means s[n, c] = mean_l x[n, c, l].
Tensor channel_means(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor s({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (std::size_t j = 0; j < l; ++j) acc += x.at(i, ci, j);
      s.at(i, ci) = acc / static_cast<double>(l);
    }
  return s;
}

void softmax_rows(Tensor& z) {
  const std::size_t n = z.dim(0), k = z.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      z.at(i, j) = std::exp(z.at(i, j) - mx);
      s += z.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) z.at(i, j) /= s;
  }
}

}  // namespace

ModeNormState ModeNormState::create(std::size_t modes, std::size_t channels, Rng& rng,
                                    double gate_init_std) {
  if (modes == 0) throw ConfigError("ModeNorm: K must be >= 1");
  ModeNormState s{Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({modes, channels}),
                  Tensor({modes}, 0.0),    Tensor({modes, channels}, 0.0),
                  Tensor({modes, channels}, 1.0)};
  for (auto& w : s.gate_weight.values()) w = rng.normal(0.0, gate_init_std);
  return s;
}

Tensor modenorm_gates(const Tensor& x, const ModeNormState& state) {
  require_rank(x, 3, "modenorm_gates");
  if (x.dim(1) != state.channels()) throw ShapeError("modenorm_gates: channel mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1), k = state.modes();
  const Tensor s = channel_means(x);
  Tensor z({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = state.gate_bias[j];
      for (std::size_t ci = 0; ci < c; ++ci) acc += state.gate_weight.at(j, ci) * s.at(i, ci);
      z.at(i, j) = acc;
    }
  softmax_rows(z);
  return z;
}

ModeNormForward modenorm_forward_train(const Tensor& x, ModeNormState& state, bool update_running) {
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = state.modes();
  Tensor gates = modenorm_gates(x, state);

  ModeNormCache cache{x, gates, Tensor({k, c}), Tensor({k, c}), Tensor({k, c}), Tensor(x.shape()),
                      state.gamma, state.gate_weight};
  std::vector<double> mass(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i) mass[j] += gates.at(i, j) * static_cast<double>(l);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index j = 0; j < static_cast<Index>(k); ++j)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t t = 0; t < l; ++t) row += x.at(i, ci, t);
        s += gates.at(i, j) * row;
      }
      const double mu = s / mass[j];
      double q = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t t = 0; t < l; ++t) row += (x.at(i, ci, t) - mu) * (x.at(i, ci, t) - mu);
        q += gates.at(i, j) * row;
      }
      cache.mean.at(j, ci) = mu;
      cache.var.at(j, ci) = q / mass[j];
      cache.inv_std.at(j, ci) = 1.0 / std::sqrt(cache.var.at(j, ci) + state.eps);
    }

  Tensor y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci)
      for (std::size_t t = 0; t < l; ++t) {
        double h = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          h += gates.at(i, j) * (x.at(i, ci, t) - cache.mean.at(j, ci)) * cache.inv_std.at(j, ci);
        cache.xhat.at(i, ci, t) = h;
        y.at(i, ci, t) = state.gamma[ci] * h + state.beta[ci];
      }

  if (update_running) {
    const double a = state.momentum;
    for (std::size_t e = 0; e < k * c; ++e) {
      state.running_mean[e] = a * state.running_mean[e] + (1.0 - a) * cache.mean[e];
      state.running_var[e] = a * state.running_var[e] + (1.0 - a) * cache.var[e];
    }
    state.initialized = true;
  }
  return {std::move(y), std::move(cache)};
}

Tensor modenorm_forward_eval(const Tensor& x, const ModeNormState& state) {
  if (!state.initialized) throw StateError("modenorm_forward_eval: running statistics never updated");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = state.modes();
  const Tensor gates = modenorm_gates(x, state);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t t = 0; t < l; ++t) {
        double h = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          h += gates.at(i, j) * (x.at(i, ci, t) - state.running_mean.at(j, ci)) /
               std::sqrt(state.running_var.at(j, ci) + state.eps);
        y.at(i, ci, t) = state.gamma[ci] * h + state.beta[ci];
      }
  return y;
}

ModeNormGrads modenorm_backward(const ModeNormCache& cache, const Tensor& dy) {
  const Tensor& x = cache.x;
  require_shape(dy, x.shape(), "modenorm_backward");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = cache.gates.dim(1);
  const Tensor& g = cache.gates;

  ModeNormGrads out{Tensor(x.shape()), Tensor({c}), Tensor({c}), Tensor({k, c}), Tensor({k})};
  for (std::size_t ci = 0; ci < c; ++ci) {
    double sg = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < l; ++t) {
        sg += dy.at(i, ci, t) * cache.xhat.at(i, ci, t);
        sb += dy.at(i, ci, t);
      }
    out.dgamma[ci] = sg;
    out.dbeta[ci] = sb;
  }

  std::vector<double> mass(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < n; ++i) mass[j] += g.at(i, j) * static_cast<double>(l);

  // Per-(sample, channel) sums of d xhat and d xhat * (x - mu_k).
  Tensor dmu({k, c}), dvar({k, c});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double mu = cache.mean.at(j, ci), is = cache.inv_std.at(j, ci);
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double ra = 0.0, rb = 0.0;
        for (std::size_t t = 0; t < l; ++t) {
          const double dh = dy.at(i, ci, t) * cache.gamma[ci];
          ra += dh;
          rb += dh * (x.at(i, ci, t) - mu);
        }
        a += g.at(i, j) * ra;
        b += g.at(i, j) * rb;
      }
      dmu.at(j, ci) = -is * a;
      dvar.at(j, ci) = -0.5 * is * is * is * b;
    }

  Tensor dg({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double mu = cache.mean.at(j, ci), is = cache.inv_std.at(j, ci), var = cache.var.at(j, ci);
        double direct = 0.0, centred = 0.0, spread = 0.0;
        for (std::size_t t = 0; t < l; ++t) {
          const double e = x.at(i, ci, t) - mu;
          direct += dy.at(i, ci, t) * cache.gamma[ci] * e;
          centred += e;
          spread += e * e - var;
        }
        acc += direct * is + (dmu.at(j, ci) * centred + dvar.at(j, ci) * spread) / mass[j];
      }
      dg.at(i, j) = acc;
    }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t t = 0; t < l; ++t) {
        const double dh = dy.at(i, ci, t) * cache.gamma[ci];
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double e = x.at(i, ci, t) - cache.mean.at(j, ci);
          acc += g.at(i, j) * (dh * cache.inv_std.at(j, ci) +
                               (dmu.at(j, ci) + 2.0 * dvar.at(j, ci) * e) / mass[j]);
        }
        out.dx.at(i, ci, t) = acc;
      }

  // Softmax and gate affine map.
  const Tensor s = channel_means(x);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += g.at(i, j) * dg.at(i, j);
    for (std::size_t j = 0; j < k; ++j) {
      const double dz = g.at(i, j) * (dg.at(i, j) - dot);
      out.dgate_bias[j] += dz;
      for (std::size_t ci = 0; ci < c; ++ci) {
        out.dgate_weight.at(j, ci) += dz * s.at(i, ci);
        const double ds = dz * cache.gate_weight.at(j, ci) / static_cast<double>(l);
        for (std::size_t t = 0; t < l; ++t) out.dx.at(i, ci, t) += ds;
      }
    }
  }
  return out;
}

}  // namespace cnorm
