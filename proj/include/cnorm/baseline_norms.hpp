#pragma once

// Comparison layers: batch norm, layer norm, mode norm, and mixture norm.
// All operate on activations x[N, C, L] and carry per-channel gamma/beta.

#include <cstddef>

#include "cnorm/gmm.hpp"
#include "cnorm/tensor.hpp"

namespace cnorm {

inline constexpr double kDefaultEps = 1e-5;
inline constexpr double kDefaultMomentum = 0.9;

// ---------------------------------------------------------------- batch norm

struct BnState {
  Tensor gamma, beta;                ///< [C]
  Tensor running_mean, running_var;  ///< [C]
  double momentum = kDefaultMomentum;  ///< weight on the old running value
  double eps = kDefaultEps;
  bool initialized = false;  ///< running stats have been updated at least once

  static BnState create(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

struct BnCache {
  Tensor xhat;     ///< [N, C, L]
  Tensor mean;     ///< [C]
  Tensor var;      ///< [C]
  Tensor inv_std;  ///< [C], 1 / sqrt(var + eps)
  Tensor gamma;    ///< [C]
};

struct BnForward {
  Tensor y;
  BnCache cache;
};

struct BnGrads {
  Tensor dx, dgamma, dbeta;
};

BnForward bn_forward_train(const Tensor& x, const BnState& state);
void bn_update_running(BnState& state, const Tensor& batch_mean, const Tensor& batch_var);
Tensor bn_forward_eval(const Tensor& x, const BnState& state);
BnGrads bn_backward(const BnCache& cache, const Tensor& dy);

// ---------------------------------------------------------------- layer norm

struct LnCache {
  Tensor xhat;     ///< [N, C, L]
  Tensor inv_std;  ///< [N]
  Tensor gamma;    ///< [C]
};

struct LnForward {
  Tensor y;
  LnCache cache;
};

/// Per-sample statistics over all (c, l); per-channel scale and shift.
LnForward ln_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
BnGrads ln_backward(const LnCache& cache, const Tensor& dy);

// ----------------------------------------------------------------- mode norm

/// Gates are softmax(gate_weight * channel_mean(x_n) + gate_bias), one per sample.
struct ModeNormState {
  Tensor gamma, beta;                ///< [C]
  Tensor gate_weight;                ///< [K, C]
  Tensor gate_bias;                  ///< [K]
  Tensor running_mean, running_var;  ///< [K, C]
  double momentum = kDefaultMomentum;
  double eps = kDefaultEps;
  bool initialized = false;

  /// gate_weight ~ normal(0, gate_init_std), everything else at its neutral value.
  static ModeNormState create(std::size_t modes, std::size_t channels, Rng& rng,
                              double gate_init_std = 0.1);
  std::size_t modes() const { return gate_bias.size(); }
  std::size_t channels() const { return gamma.size(); }
};

struct ModeNormCache {
  Tensor x;          ///< [N, C, L]
  Tensor gates;      ///< [N, K]
  Tensor mean, var;  ///< [K, C] weighted batch moments
  Tensor inv_std;    ///< [K, C]
  Tensor xhat;       ///< [N, C, L]
  Tensor gamma;      ///< [C]
  Tensor gate_weight;
};

struct ModeNormForward {
  Tensor y;
  ModeNormCache cache;
};

struct ModeNormGrads {
  Tensor dx, dgamma, dbeta, dgate_weight, dgate_bias;
};

/// Per-sample gates from the current parameters.
Tensor modenorm_gates(const Tensor& x, const ModeNormState& state);

/// Batch-statistics forward. Running statistics are updated when `update_running`.
ModeNormForward modenorm_forward_train(const Tensor& x, ModeNormState& state,
                                       bool update_running = true);
Tensor modenorm_forward_eval(const Tensor& x, const ModeNormState& state);
ModeNormGrads modenorm_backward(const ModeNormCache& cache, const Tensor& dy);

// -------------------------------------------------------------- mixture norm

/// Mixture normalisation: a diagonal GMM (fitted by EM, outside the loss)
/// supplies posteriors; moments are posterior-weighted over the batch.
struct MixNormState {
  Tensor gamma, beta;  ///< [C]
  GmmParams gmm;       ///< over D = C channel vectors
  Tensor running_mean, running_var;  ///< [K, C]
  double momentum = kDefaultMomentum;
  double eps = kDefaultEps;
  bool fitted = false;       ///< gmm holds EM output
  bool initialized = false;  ///< running moments updated at least once

  static MixNormState create(std::size_t components, std::size_t channels);
  std::size_t components() const { return running_mean.dim(0); }
  std::size_t channels() const { return gamma.size(); }
};

struct MixNormCache {
  Tensor post;       ///< [N*L, K], rows are (n, l) positions
  Tensor mean, var;  ///< [K, C]
  Tensor scale;      ///< [N*L, C], d xhat / d x under frozen statistics
  Tensor xhat;       ///< [N, C, L]
  Tensor gamma;
};

struct MixNormForward {
  Tensor y;
  MixNormCache cache;
};

/// Rows are the (n, l) positions of x; columns are channels. Shape [N*L, C].
Tensor positions_matrix(const Tensor& x);
/// Inverse of positions_matrix for a given [N, C, L] shape.
Tensor from_positions(const Tensor& p, const Shape& shape);

MixNormForward mixnorm_forward(const Tensor& x, const GmmParams& gmm, const Tensor& gamma,
                               const Tensor& beta, double eps);
/// Same transform with externally supplied posteriors and moments, which are
/// treated as constants. Used for the eval path and the frozen-statistics oracle.
MixNormForward mixnorm_forward_frozen(const Tensor& x, const Tensor& post, const Tensor& weights,
                                      const Tensor& mean, const Tensor& var, const Tensor& gamma,
                                      const Tensor& beta, double eps);
void mixnorm_update_running(MixNormState& state, const Tensor& mean, const Tensor& var);
Tensor mixnorm_forward_eval(const Tensor& x, const MixNormState& state);
/// Gradients with posteriors, weights, and moments held fixed.
BnGrads mixnorm_backward(const MixNormCache& cache, const Tensor& dy);

}  // namespace cnorm
