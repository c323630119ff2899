#include "cnorm/context_norm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cnorm/error.hpp"

namespace cnorm {
namespace {

using Index = std::ptrdiff_t;

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_inputs(const Tensor& x, ContextIds ids, std::size_t contexts, std::size_t channels,
                  const char* what) {
  require_rank(x, 3, what);
  if (x.dim(1) != channels)
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, layer expects " + std::to_string(channels));
  if (ids.size() != x.dim(0))
    throw ShapeError(std::string(what) + ": " + std::to_string(ids.size()) +
                     " context ids for a batch of " + std::to_string(x.dim(0)));
  for (auto k : ids)
    if (k >= contexts)
      throw ConfigError(std::string(what) + ": context id " + std::to_string(k) + " out of range [0, " +
                        std::to_string(contexts) + ")");
}

void check_lambdas(const Tensor& lambdas) {
  require_rank(lambdas, 1, "context lambdas");
  double total = 0.0;
  for (double v : lambdas.values()) {
    if (!(v > 0.0)) throw ConfigError("context proportions must be positive");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("context proportions must sum to 1");
}

}  // namespace

// ------------------------------------------------------------------------ CN

CnState CnState::create(const Tensor& lambdas, std::size_t channels) {
  check_lambdas(lambdas);
  const std::size_t k = lambdas.size();
  CnState s{Tensor({k, channels}, 1.0), Tensor({k, channels}, 0.0), lambdas,
            Tensor({k, channels}, 0.0), Tensor({k, channels}, 1.0), std::vector<bool>(k, false)};
  return s;
}

CnForward cn_forward_train(const Tensor& x, ContextIds ids, CnState& state, bool update_running) {
  const std::size_t k = state.contexts(), c = state.channels();
  check_inputs(x, ids, k, c, "cn_forward_train");
  const std::size_t n = x.dim(0), l = x.dim(2);

  CnCache cache{Tensor(x.shape()), Tensor({k, c}), Tensor({k, c}), state.gamma,
                std::vector<std::size_t>(ids.begin(), ids.end()), std::vector<std::size_t>(k, 0),
                std::vector<bool>(k, false), Tensor({k, c}), Tensor({k, c})};
  for (auto id : ids) cache.counts[id] += l;

  std::vector<std::uint8_t> mask(n);
  for (std::size_t ctx = 0; ctx < k; ++ctx) {
    if (cache.counts[ctx] == 0) continue;
    if (cache.counts[ctx] >= 2) {
      for (std::size_t i = 0; i < n; ++i) mask[i] = ids[i] == ctx;
      const Moments m = masked_moments(x, mask);
      std::copy_n(m.mean.data(), c, cache.mean.row(ctx).begin());
      std::copy_n(m.var.data(), c, cache.var.row(ctx).begin());
      cache.batch_stats[ctx] = true;
    } else {
      std::copy_n(state.running_mean.row(ctx).begin(), c, cache.mean.row(ctx).begin());
      std::copy_n(state.running_var.row(ctx).begin(), c, cache.var.row(ctx).begin());
    }
    const double root_lambda = std::sqrt(state.lambdas[ctx]);
    for (std::size_t ci = 0; ci < c; ++ci) {
      cache.inv_std.at(ctx, ci) = 1.0 / std::sqrt(cache.var.at(ctx, ci) + state.eps);
      cache.scale.at(ctx, ci) = cache.inv_std.at(ctx, ci) / root_lambda;
    }
  }

  Tensor y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      const std::size_t ctx = ids[i];
      const std::size_t base = (i * c + ci) * l;
      const double mu = cache.mean.at(ctx, ci), s = cache.scale.at(ctx, ci);
      const double g = state.gamma.at(ctx, ci), b = state.beta.at(ctx, ci);
      for (std::size_t t = 0; t < l; ++t) {
        const double h = (x[base + t] - mu) * s;
        cache.xhat[base + t] = h;
        y[base + t] = g * h + b;
      }
    }

  if (update_running) {
    const double a = state.momentum;
    for (std::size_t ctx = 0; ctx < k; ++ctx) {
      if (!cache.batch_stats[ctx]) continue;
      for (std::size_t ci = 0; ci < c; ++ci) {
        state.running_mean.at(ctx, ci) = a * state.running_mean.at(ctx, ci) + (1.0 - a) * cache.mean.at(ctx, ci);
        state.running_var.at(ctx, ci) = a * state.running_var.at(ctx, ci) + (1.0 - a) * cache.var.at(ctx, ci);
      }
      state.initialized[ctx] = true;
    }
  }
  return {std::move(y), std::move(cache)};
}

CnGrads cn_backward(const CnCache& cache, const Tensor& dy) {
  require_shape(dy, cache.xhat.shape(), "cn_backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), l = dy.dim(2), k = cache.gamma.dim(0);
  CnGrads g{Tensor(dy.shape()), Tensor({k, c}), Tensor({k, c})};

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
    // Per-context sums of d xhat and d xhat * z, with z the unit-normalised value.
    std::vector<double> sum_d(k, 0.0), sum_dz(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ctx = cache.ids[i];
      const std::size_t base = (i * c + ci) * l;
      const double gam = cache.gamma.at(ctx, ci);
      const double to_z = cache.inv_std.at(ctx, ci) / cache.scale.at(ctx, ci);  // sqrt(lambda)
      for (std::size_t t = 0; t < l; ++t) {
        const double d = dy[base + t] * gam;
        sum_d[ctx] += d;
        sum_dz[ctx] += d * cache.xhat[base + t] * to_z;
        g.dgamma.at(ctx, ci) += dy[base + t] * cache.xhat[base + t];
        g.dbeta.at(ctx, ci) += dy[base + t];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ctx = cache.ids[i];
      const std::size_t base = (i * c + ci) * l;
      const double gam = cache.gamma.at(ctx, ci);
      const double s = cache.scale.at(ctx, ci);
      if (!cache.batch_stats[ctx]) {
        for (std::size_t t = 0; t < l; ++t) g.dx[base + t] = dy[base + t] * gam * s;
        continue;
      }
      const double m = static_cast<double>(cache.counts[ctx]);
      const double to_z = cache.inv_std.at(ctx, ci) / s;
      for (std::size_t t = 0; t < l; ++t) {
        const double z = cache.xhat[base + t] * to_z;
        g.dx[base + t] = s / m * (m * dy[base + t] * gam - sum_d[ctx] - z * sum_dz[ctx]);
      }
    }
  }
  return g;
}

Tensor cn_forward_eval(const Tensor& x, ContextIds ids, const CnState& state) {
  const std::size_t k = state.contexts(), c = state.channels();
  check_inputs(x, ids, k, c, "cn_forward_eval");
  for (auto id : ids)
    if (!state.initialized[id])
      throw StateError("cn_forward_eval: context " + std::to_string(id) + " has no running statistics");
  const std::size_t n = x.dim(0), l = x.dim(2);
  Tensor y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      const std::size_t ctx = ids[i];
      const std::size_t base = (i * c + ci) * l;
      const double s = 1.0 / (std::sqrt(state.lambdas[ctx]) * std::sqrt(state.running_var.at(ctx, ci) + state.eps));
      for (std::size_t t = 0; t < l; ++t)
        y[base + t] = state.gamma.at(ctx, ci) * (x[base + t] - state.running_mean.at(ctx, ci)) * s +
                      state.beta.at(ctx, ci);
    }
  return y;
}

// ---------------------------------------------------------------------- CN-X

CnxParams CnxParams::create(const Tensor& lambdas, std::size_t channels, Rng& rng) {
  check_lambdas(lambdas);
  const std::size_t k = lambdas.size();
  CnxParams p{Tensor({k, channels}, 1.0), Tensor({k, channels}, 0.0), Tensor({k, channels}),
              Tensor({k, channels}, 0.0), lambdas};
  for (auto& v : p.mu.values()) v = rng.normal(0.0, 0.5);
  return p;
}

CnxForward cnx_forward(const Tensor& x, ContextIds ids, const CnxParams& params) {
  const std::size_t k = params.contexts(), c = params.channels();
  check_inputs(x, ids, k, c, "cnx_forward");
  const std::size_t n = x.dim(0), l = x.dim(2);

  Tensor coef({k, c});
  for (std::size_t ctx = 0; ctx < k; ++ctx)
    for (std::size_t ci = 0; ci < c; ++ci)
      coef.at(ctx, ci) = 1.0 / (std::sqrt(params.lambdas[ctx]) *
                                std::sqrt(std::exp(params.log_var.at(ctx, ci)) + params.eps));

  CnxForward out{Tensor(x.shape()),
                 CnxCache{x, Tensor(x.shape()), std::vector<std::size_t>(ids.begin(), ids.end()), params}};
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i)
    for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
      const std::size_t ctx = ids[i];
      const std::size_t base = (i * c + ci) * l;
      for (std::size_t t = 0; t < l; ++t) {
        const double h = (x[base + t] - params.mu.at(ctx, ci)) * coef.at(ctx, ci);
        out.cache.xhat[base + t] = h;
        out.y[base + t] = params.gamma.at(ctx, ci) * h + params.beta.at(ctx, ci);
      }
    }
  return out;
}

CnxGrads cnx_backward(const CnxCache& cache, const Tensor& dy) {
  require_shape(dy, cache.x.shape(), "cnx_backward");
  const CnxParams& p = cache.params;
  const std::size_t n = dy.dim(0), c = dy.dim(1), l = dy.dim(2), k = p.contexts();
  CnxGrads g{Tensor(dy.shape()), Tensor({k, c}), Tensor({k, c}), Tensor({k, c}), Tensor({k, c})};

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
    std::vector<double> var(k), root(k), coef(k);
    for (std::size_t ctx = 0; ctx < k; ++ctx) {
      var[ctx] = std::exp(p.log_var.at(ctx, ci));
      root[ctx] = std::sqrt(var[ctx] + p.eps);
      coef[ctx] = 1.0 / (std::sqrt(p.lambdas[ctx]) * root[ctx]);
    }
    std::vector<double> sum_d(k, 0.0), sum_de(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ctx = cache.ids[i];
      const std::size_t base = (i * c + ci) * l;
      for (std::size_t t = 0; t < l; ++t) {
        const double d = dy[base + t] * p.gamma.at(ctx, ci);
        g.dx[base + t] = d * coef[ctx];
        sum_d[ctx] += d;
        sum_de[ctx] += d * (cache.x[base + t] - p.mu.at(ctx, ci));
        g.dgamma.at(ctx, ci) += dy[base + t] * cache.xhat[base + t];
        g.dbeta.at(ctx, ci) += dy[base + t];
      }
    }
    for (std::size_t ctx = 0; ctx < k; ++ctx) {
      g.dmu.at(ctx, ci) = -sum_d[ctx] * coef[ctx];
      const double dvar = -0.5 * sum_de[ctx] * coef[ctx] / (var[ctx] + p.eps);
      g.dlog_var.at(ctx, ci) = dvar * var[ctx];
    }
  }
  return g;
}

// ----------------------------------------------------------------------- ACN

Tensor simplex_softmax(const Tensor& logits) {
  const std::size_t k = logits.size();
  Tensor lam({k});
  double mx = logits[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    lam[j] = std::exp(logits[j] - mx);
    total += lam[j];
  }
  double head = 0.0;
  for (std::size_t j = 0; j + 1 < k; ++j) {
    lam[j] /= total;
    head += lam[j];
  }
  const double last = 1.0 - head;
  lam[k - 1] = last > 0.0 ? last : lam[k - 1] / total;
  return lam;
}

Tensor AcnParams::lambdas() const { return simplex_softmax(logit_lambda); }

AcnParams acn_init(std::size_t contexts, std::size_t channels, Rng& rng) {
  if (contexts == 0) throw ConfigError("acn_init: K must be >= 1");
  AcnParams p{Tensor({contexts, channels}, 1.0), Tensor({contexts, channels}, 0.0),
              Tensor({contexts}, 0.0), Tensor({contexts, channels}), Tensor({contexts, channels}, 0.0)};
  for (auto& v : p.mu.values()) v = rng.normal(0.0, 0.5);
  return p;
}

namespace {

struct AcnTerms {
  Tensor lambdas;      // [K]
  Tensor log_lambdas;  // [K]
  Tensor var;          // [K, C]
  Tensor coef;         // [K, C] = 1 / (sqrt(lambda) sqrt(var + eps))
  Tensor log_norm;     // [K]  log lambda_k - 0.5 sum_c (log 2pi + log_var)
};

AcnTerms acn_terms(const AcnParams& p) {
  const std::size_t k = p.contexts(), c = p.channels();
  AcnTerms t{p.lambdas(), Tensor({k}), Tensor({k, c}), Tensor({k, c}), Tensor({k})};
  double mx = p.logit_lambda[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, p.logit_lambda[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += std::exp(p.logit_lambda[j] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < k; ++j) {
    t.log_lambdas[j] = p.logit_lambda[j] - lse;
    double acc = 0.0;
    for (std::size_t ci = 0; ci < c; ++ci) {
      t.var.at(j, ci) = std::exp(p.log_var.at(j, ci));
      t.coef.at(j, ci) = 1.0 / (std::sqrt(t.lambdas[j]) * std::sqrt(t.var.at(j, ci) + p.eps));
      acc += kLog2Pi + p.log_var.at(j, ci);
    }
    t.log_norm[j] = t.log_lambdas[j] - 0.5 * acc;
  }
  return t;
}

}  // namespace

AcnForward acn_forward(const Tensor& x, const AcnParams& params) {
  require_rank(x, 3, "acn_forward");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = params.contexts();
  if (c != params.channels())
    throw ShapeError("acn_forward: input has " + std::to_string(c) + " channels, layer expects " +
                     std::to_string(params.channels()));
  const AcnTerms terms = acn_terms(params);

  AcnForward out{Tensor(x.shape()), AcnCache{x, Tensor({n * l, k}), Tensor(x.shape()), params, terms.lambdas}};
  AcnCache& cache = out.cache;

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    std::vector<double> logp(k);
    for (std::size_t t = 0; t < l; ++t) {
      const std::size_t row = i * l + t;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        double q = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double e = x.at(i, ci, t) - params.mu.at(j, ci);
          q += e * e / terms.var.at(j, ci);
        }
        logp[j] = terms.log_norm[j] - 0.5 * q;
        best = std::max(best, logp[j]);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += (logp[j] = std::exp(logp[j] - best));
      for (std::size_t j = 0; j < k; ++j) cache.post.at(row, j) = logp[j] / s;

      for (std::size_t ci = 0; ci < c; ++ci) {
        double h = 0.0, y = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double p = cache.post.at(row, j);
          const double hk = (x.at(i, ci, t) - params.mu.at(j, ci)) * terms.coef.at(j, ci);
          h += p * hk;
          y += p * (params.gamma.at(j, ci) * hk + params.beta.at(j, ci));
        }
        cache.xhat.at(i, ci, t) = h;
        out.y.at(i, ci, t) = y;
      }
    }
  }
  return out;
}

AcnGrads acn_backward(const AcnCache& cache, const Tensor& dy) {
  const Tensor& x = cache.x;
  require_shape(dy, x.shape(), "acn_backward");
  const AcnParams& p = cache.params;
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2), k = p.contexts();
  const AcnTerms terms = acn_terms(p);
  const Tensor& post = cache.post;

  AcnGrads g{Tensor(x.shape()), Tensor({k, c}), Tensor({k, c}), Tensor({k}), Tensor({k, c}), Tensor({k, c})};

  // Gradient w.r.t. the joint log density l_jk = log lambda_k + log p(x_j | k),
  // through the softmax that produces the posterior.
  Tensor dlogp({n * l, k});
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    std::vector<double> dp(k);
    for (std::size_t t = 0; t < l; ++t) {
      const std::size_t row = i * l + t;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double hk = (x.at(i, ci, t) - p.mu.at(j, ci)) * terms.coef.at(j, ci);
          acc += dy.at(i, ci, t) * (p.gamma.at(j, ci) * hk + p.beta.at(j, ci));
        }
        dp[j] = acc;
        dot += post.at(row, j) * acc;
      }
      for (std::size_t j = 0; j < k; ++j) dlogp.at(row, j) = post.at(row, j) * (dp[j] - dot);

      for (std::size_t ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double e = x.at(i, ci, t) - p.mu.at(j, ci);
          acc += dy.at(i, ci, t) * post.at(row, j) * p.gamma.at(j, ci) * terms.coef.at(j, ci) -
                 dlogp.at(row, j) * e / terms.var.at(j, ci);
        }
        g.dx.at(i, ci, t) = acc;
      }
    }
  }

  std::vector<double> dlog_lambda(k, 0.0);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < static_cast<Index>(k); ++j) {
    double dlam = 0.0, dl_sum = 0.0;
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double var = terms.var.at(j, ci), coef = terms.coef.at(j, ci), gam = p.gamma.at(j, ci);
      double dgam = 0.0, dbet = 0.0, dmu = 0.0, dvar = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < l; ++t) {
          const std::size_t row = i * l + t;
          const double pr = post.at(row, j), d = dy.at(i, ci, t), dl = dlogp.at(row, j);
          const double e = x.at(i, ci, t) - p.mu.at(j, ci);
          const double hk = e * coef;
          const double dh = d * pr * gam;
          dgam += d * pr * hk;
          dbet += d * pr;
          dmu += -dh * coef + dl * e / var;
          dvar += -0.5 * dh * hk / (var + p.eps) - 0.5 * dl * (1.0 / var - e * e / (var * var));
          dlam += -0.5 * dh * hk / terms.lambdas[j];
        }
      g.dgamma.at(j, ci) = dgam;
      g.dbeta.at(j, ci) = dbet;
      g.dmu.at(j, ci) = dmu;
      g.dlog_var.at(j, ci) = dvar * var;
    }
    for (std::size_t row = 0; row < n * l; ++row) dl_sum += dlogp.at(row, j);
    dlog_lambda[j] = dlam * terms.lambdas[j] + dl_sum;
  }

  double total = 0.0;
  for (double v : dlog_lambda) total += v;
  for (std::size_t j = 0; j < k; ++j) g.dlogit_lambda[j] = dlog_lambda[j] - terms.lambdas[j] * total;
  return g;
}

}  // namespace cnorm
