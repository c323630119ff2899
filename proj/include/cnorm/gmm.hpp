#pragma once

#include <cstddef>
#include <span>

#include "cnorm/tensor.hpp"

namespace cnorm {

inline constexpr double kVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian mixture over R^D.
struct GmmParams {
  Tensor weights;  ///< [K], on the simplex
  Tensor means;    ///< [K, D]
  Tensor vars;     ///< [K, D], each entry >= kVarianceFloor

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.dim(1); }

  /// Throws MixtureError unless weights are positive, sum to 1 within 1e-12,
  /// and variances respect the floor.
  void validate() const;
};

/// log N(x; m, diag(var))
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean,
                       std::span<const double> var);

/// Row-stochastic p(k | x_i) for every row of X[n, D], computed with log-sum-exp.
Tensor posteriors(const Tensor& X, const GmmParams& gmm);

/// Data log-likelihood sum_i log sum_k lambda_k p(x_i | k).
double log_likelihood(const Tensor& X, const GmmParams& gmm);

struct WeightedMoments {
  Tensor mean;  ///< [K, D]
  Tensor var;   ///< [K, D], biased
};

/// Responsibility-weighted per-component mean and variance. Each row of R is
/// first divided by its own sum, so unnormalised responsibilities are accepted.
WeightedMoments weighted_moments(const Tensor& X, const Tensor& R);

struct EmStep {
  GmmParams gmm;
  double loglik = 0.0;  ///< log-likelihood of X under the parameters passed in
};

/// One E-step + M-step. A component whose total responsibility falls below
/// 1e-12 is reseeded at the worst-explained point.
EmStep em_step(const Tensor& X, const GmmParams& gmm);

struct EmResult {
  GmmParams gmm;
  std::size_t iterations = 0;
  double loglik = 0.0;
};

/// Runs em_step from `init` until the log-likelihood changes by less than `tol`
/// or `max_iters` steps have been taken.
EmResult em_refine(const Tensor& X, GmmParams init, std::size_t max_iters, double tol = 1e-6);

/// k-means++ seeded EM fit.
GmmParams em_fit(const Tensor& X, std::size_t k, Rng& rng, std::size_t max_iters = 100,
                 double tol = 1e-6);

/// k-means++ seeding: K distinct rows of X chosen with probability proportional
/// to squared distance from the already chosen ones. Returns [K, D].
Tensor kmeanspp_seed(const Tensor& X, std::size_t k, Rng& rng);

}  // namespace cnorm
