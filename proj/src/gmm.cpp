#include "cnorm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "cnorm/error.hpp"
#include "cnorm/kernels.hpp"

namespace cnorm {
namespace {

using Index = std::ptrdiff_t;

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2 pi)
constexpr double kCollapseMass = 1e-12;

void require_compatible(const Tensor& X, const GmmParams& gmm, const char* what) {
  require_rank(X, 2, what);
  if (gmm.means.rank() != 2 || gmm.vars.shape() != gmm.means.shape() ||
      gmm.weights.size() != gmm.means.dim(0))
    throw MixtureError(std::string(what) + ": inconsistent mixture parameter shapes");
  if (X.dim(1) != gmm.dim())
    throw ShapeError(std::string(what) + ": data dimension " + std::to_string(X.dim(1)) +
                     " != mixture dimension " + std::to_string(gmm.dim()));
}

// Writes log(lambda_k) + log p(x_i | k) into logp[i, k] and returns the
// per-row log-sum-exp in `lse`.
void joint_log_density(const Tensor& X, const GmmParams& gmm, Tensor& logp, std::vector<double>& lse) {
  const std::size_t n = X.dim(0), k = gmm.components(), d = gmm.dim();
  std::vector<double> log_norm(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += kLog2Pi + std::log(gmm.vars.at(j, t));
    log_norm[j] = std::log(gmm.weights[j]) - 0.5 * s;
  }
  lse.assign(n, 0.0);

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* xi = X.data() + i * d;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double* mj = gmm.means.data() + j * d;
      const double* vj = gmm.vars.data() + j * d;
      double q = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double e = xi[t] - mj[t];
        q += e * e / vj[t];
      }
      const double v = log_norm[j] - 0.5 * q;
      logp[i * k + j] = v;
      best = std::max(best, v);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logp[i * k + j] - best);
    lse[i] = best + std::log(s);
  }
}

// Rows of log-weights to probabilities. Normalises by the shifted sum rather
// than exp(logp - lse): far from every mean lse is ~-1e6 and that subtraction
// alone costs the last 10 bits.
void normalise_log_rows(Tensor& logp) {
  const std::size_t n = logp.dim(0), k = logp.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double* r = logp.data() + i * k;
    const double best = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (r[j] = std::exp(r[j] - best));
    for (std::size_t j = 0; j < k; ++j) r[j] /= s;
  }
}

Tensor global_variance(const Tensor& X) {
  const std::size_t n = X.dim(0), d = X.dim(1);
  Tensor var({d});
  for (std::size_t t = 0; t < d; ++t) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += X.at(i, t);
    m /= static_cast<double>(n);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) q += (X.at(i, t) - m) * (X.at(i, t) - m);
    var[t] = std::max(q / static_cast<double>(n), kVarianceFloor);
  }
  return var;
}

}  // namespace

void GmmParams::validate() const {
  if (weights.rank() != 1 || means.rank() != 2 || vars.shape() != means.shape() ||
      weights.size() != means.dim(0))
    throw MixtureError("gmm: inconsistent parameter shapes");
  double total = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] > 0.0)) throw MixtureError("gmm: mixture weight " + std::to_string(k) + " is not positive");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-12) throw MixtureError("gmm: mixture weights do not sum to 1");
  for (double v : vars.values())
    if (!(v >= kVarianceFloor)) throw MixtureError("gmm: variance below floor");
}

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean,
                       std::span<const double> var) {
  if (x.size() != mean.size() || x.size() != var.size())
    throw ShapeError("gaussian_logpdf: dimension mismatch");
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double e = x[d] - mean[d];
    s += kLog2Pi + std::log(var[d]) + e * e / var[d];
  }
  return -0.5 * s;
}

Tensor posteriors(const Tensor& X, const GmmParams& gmm) {
  require_compatible(X, gmm, "posteriors");
  Tensor post({X.dim(0), gmm.components()});
  std::vector<double> lse;
  joint_log_density(X, gmm, post, lse);
  normalise_log_rows(post);
  return post;
}

double log_likelihood(const Tensor& X, const GmmParams& gmm) {
  require_compatible(X, gmm, "log_likelihood");
  Tensor logp({X.dim(0), gmm.components()});
  std::vector<double> lse;
  joint_log_density(X, gmm, logp, lse);
  double total = 0.0;
  for (double v : lse) total += v;
  return total;
}

WeightedMoments weighted_moments(const Tensor& X, const Tensor& R) {
  require_rank(X, 2, "weighted_moments");
  require_rank(R, 2, "weighted_moments");
  if (R.dim(0) != X.dim(0)) throw ShapeError("weighted_moments: row count mismatch");
  const std::size_t n = X.dim(0), d = X.dim(1), k = R.dim(1);

  Tensor w({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double rs = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (R.at(i, j) < 0.0) throw MixtureError("weighted_moments: negative responsibility");
      rs += R.at(i, j);
    }
    if (rs > 0.0)
      for (std::size_t j = 0; j < k; ++j) w.at(i, j) = R.at(i, j) / rs;
  }

  WeightedMoments m{Tensor({k, d}), Tensor({k, d})};
  for (std::size_t j = 0; j < k; ++j) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += w.at(i, j);
    if (!(mass > 0.0))
      throw MixtureError("weighted_moments: component " + std::to_string(j) + " has no mass");
    for (std::size_t t = 0; t < d; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += w.at(i, j) * X.at(i, t);
      const double mu = s / mass;
      double q = 0.0;
      for (std::size_t i = 0; i < n; ++i) q += w.at(i, j) * (X.at(i, t) - mu) * (X.at(i, t) - mu);
      m.mean.at(j, t) = mu;
      m.var.at(j, t) = q / mass;
    }
  }
  return m;
}

EmStep em_step(const Tensor& X, const GmmParams& gmm) {
  require_compatible(X, gmm, "em_step");
  const std::size_t n = X.dim(0), k = gmm.components(), d = gmm.dim();
  if (n < k) throw DegenerateError("em_step: fewer points than components");

  Tensor resp({n, k});
  std::vector<double> lse;
  joint_log_density(X, gmm, resp, lse);
  double loglik = 0.0;
  for (std::size_t i = 0; i < n; ++i) loglik += lse[i];
  normalise_log_rows(resp);

  GmmParams next{Tensor({k}), Tensor({k, d}), Tensor({k, d})};
  std::vector<double> mass(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) mass[j] += resp.at(i, j);

  std::vector<std::size_t> worst_first;  // points ordered by increasing likelihood
  Tensor fallback_var;
  for (std::size_t j = 0; j < k; ++j) {
    if (mass[j] < kCollapseMass) {
      if (worst_first.empty()) {
        worst_first.resize(n);
        for (std::size_t i = 0; i < n; ++i) worst_first[i] = i;
        std::stable_sort(worst_first.begin(), worst_first.end(),
                         [&](std::size_t a, std::size_t b) { return lse[a] < lse[b]; });
        fallback_var = global_variance(X);
      }
      const std::size_t pick = worst_first[std::min(j, n - 1)];
      for (std::size_t t = 0; t < d; ++t) {
        next.means.at(j, t) = X.at(pick, t);
        next.vars.at(j, t) = fallback_var[t];
      }
      mass[j] = 1.0;
      continue;
    }
    for (std::size_t t = 0; t < d; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += resp.at(i, j) * X.at(i, t);
      const double mu = s / mass[j];
      double q = 0.0;
      for (std::size_t i = 0; i < n; ++i) q += resp.at(i, j) * (X.at(i, t) - mu) * (X.at(i, t) - mu);
      next.means.at(j, t) = mu;
      next.vars.at(j, t) = std::max(q / mass[j], kVarianceFloor);
    }
  }
  double total = 0.0;
  for (double m : mass) total += m;
  for (std::size_t j = 0; j < k; ++j) next.weights[j] = mass[j] / total;
  return {std::move(next), loglik};
}

EmResult em_refine(const Tensor& X, GmmParams init, std::size_t max_iters, double tol) {
  EmResult r{std::move(init), 0, 0.0};
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    EmStep s = em_step(X, r.gmm);
    r.gmm = std::move(s.gmm);
    ++r.iterations;
    if (std::abs(s.loglik - prev) < tol) break;
    prev = s.loglik;
  }
  r.loglik = log_likelihood(X, r.gmm);
  return r;
}

Tensor kmeanspp_seed(const Tensor& X, std::size_t k, Rng& rng) {
  require_rank(X, 2, "kmeanspp_seed");
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (k == 0) throw ConfigError("kmeanspp_seed: K must be >= 1");
  if (n < k) throw DegenerateError("kmeanspp_seed: fewer points than centers");

  Tensor centers({k, d});
  std::size_t first = rng.below(n);
  std::copy_n(X.row(first).begin(), d, centers.row(0).begin());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double q = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double e = X.at(i, t) - centers.at(c - 1, t);
        q += e * e;
      }
      best[i] = std::min(best[i], q);
      total += best[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= best[i];
        if (target < 0.0 && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    std::copy_n(X.row(pick).begin(), d, centers.row(c).begin());
  }
  return centers;
}

GmmParams em_fit(const Tensor& X, std::size_t k, Rng& rng, std::size_t max_iters, double tol) {
  require_rank(X, 2, "em_fit");
  if (max_iters == 0) throw ConfigError("em_fit: max_iters must be >= 1");
  const std::size_t d = X.dim(1);
  GmmParams init{Tensor({k}, 1.0 / static_cast<double>(k)), kmeanspp_seed(X, k, rng), Tensor({k, d})};
  const Tensor gv = global_variance(X);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t t = 0; t < d; ++t) init.vars.at(j, t) = gv[t];
  return em_refine(X, std::move(init), max_iters, tol).gmm;
}

}  // namespace cnorm
