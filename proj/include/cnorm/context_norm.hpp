#pragma once

// Context normalisation layers.
//
//   CN   per-(context, channel) batch moments, rescaled by 1/sqrt(lambda_k)
//   CN-X the same transform with the per-context mean/variance learned as weights
//   ACN  K soft contexts from a learned diagonal GMM; the posterior weights
//        per-component standardisations and per-component affine maps
//
// Context ids are 0-based and given per sample; every activation of a sample
// belongs to that sample's context.

#include <cstddef>
#include <span>
#include <vector>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/tensor.hpp"

namespace cnorm {

using ContextIds = std::span<const std::size_t>;

// ------------------------------------------------------------------------ CN

struct CnState {
  Tensor gamma, beta;                ///< [K, C]
  Tensor lambdas;                    ///< [K], dataset proportions
  Tensor running_mean, running_var;  ///< [K, C]
  std::vector<bool> initialized;     ///< per context
  double momentum = kDefaultMomentum;
  double eps = kDefaultEps;

  static CnState create(const Tensor& lambdas, std::size_t channels);
  std::size_t contexts() const { return lambdas.size(); }
  std::size_t channels() const { return gamma.dim(1); }
};

struct CnCache {
  Tensor xhat;     ///< [N, C, L] after the 1/sqrt(lambda) factor
  Tensor inv_std;  ///< [K, C]
  Tensor scale;    ///< [K, C] = inv_std / sqrt(lambda_k)
  Tensor gamma;    ///< [K, C]
  std::vector<std::size_t> ids;
  std::vector<std::size_t> counts;  ///< activations per context and channel in the batch
  std::vector<bool> batch_stats;    ///< context normalised with batch moments (else running)
  Tensor mean, var;                 ///< [K, C] statistics actually used
};

struct CnForward {
  Tensor y;
  CnCache cache;
};

struct CnGrads {
  Tensor dx, dgamma, dbeta;  ///< dgamma, dbeta: [K, C]
};

/// Contexts with a single activation per channel in the batch fall back to
/// their running statistics and skip the running update for this step.
CnForward cn_forward_train(const Tensor& x, ContextIds ids, CnState& state,
                           bool update_running = true);
CnGrads cn_backward(const CnCache& cache, const Tensor& dy);
Tensor cn_forward_eval(const Tensor& x, ContextIds ids, const CnState& state);

// ---------------------------------------------------------------------- CN-X

struct CnxParams {
  Tensor gamma, beta;  ///< [K, C]
  Tensor mu;           ///< [K, C]
  Tensor log_var;      ///< [K, C], sigma^2 = exp(log_var)
  Tensor lambdas;      ///< [K], frozen dataset proportions
  double eps = kDefaultEps;

  /// mu ~ normal(0, 0.5), log_var = 0, gamma = 1, beta = 0.
  static CnxParams create(const Tensor& lambdas, std::size_t channels, Rng& rng);
  std::size_t contexts() const { return lambdas.size(); }
  std::size_t channels() const { return gamma.dim(1); }
};

struct CnxCache {
  Tensor x;
  Tensor xhat;  ///< [N, C, L]
  std::vector<std::size_t> ids;
  CnxParams params;
};

struct CnxForward {
  Tensor y;
  CnxCache cache;
};

struct CnxGrads {
  Tensor dx, dgamma, dbeta, dmu, dlog_var;
};

/// Same transform in train and eval mode.
CnxForward cnx_forward(const Tensor& x, ContextIds ids, const CnxParams& params);
CnxGrads cnx_backward(const CnxCache& cache, const Tensor& dy);

// ----------------------------------------------------------------------- ACN

struct AcnParams {
  Tensor gamma, beta;    ///< [K, C]
  Tensor logit_lambda;   ///< [K], lambda = softmax(logit_lambda)
  Tensor mu;             ///< [K, C], shared by the density and the normaliser
  Tensor log_var;        ///< [K, C]
  double eps = kDefaultEps;

  std::size_t contexts() const { return logit_lambda.size(); }
  std::size_t channels() const { return gamma.dim(1); }
  Tensor lambdas() const;
};

/// Softmax whose last entry closes the simplex, so that summing the result
/// left to right gives exactly 1.0.
Tensor simplex_softmax(const Tensor& logits);

AcnParams acn_init(std::size_t contexts, std::size_t channels, Rng& rng);

struct AcnCache {
  Tensor x;       ///< [N, C, L]
  Tensor post;    ///< [N*L, K]
  Tensor xhat;    ///< [N, C, L], posterior-weighted normalised activation
  AcnParams params;
  Tensor lambdas;
};

struct AcnForward {
  Tensor y;
  AcnCache cache;
};

struct AcnGrads {
  Tensor dx, dgamma, dbeta, dlogit_lambda, dmu, dlog_var;
};

/// y = sum_k p(k|x) (gamma_k (x - mu_k) / (sqrt(lambda_k) sqrt(sigma_k^2 + eps)) + beta_k),
/// per position over the channel vector. Used unchanged at inference.
AcnForward acn_forward(const Tensor& x, const AcnParams& params);
AcnGrads acn_backward(const AcnCache& cache, const Tensor& dy);

}  // namespace cnorm
