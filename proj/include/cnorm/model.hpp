#pragma once

// Layer stack for the comparison experiments: dense / 3x3 conv / activation
// layers plus one pluggable normalisation kind used at every norm slot.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/context_norm.hpp"
#include "cnorm/tensor.hpp"

namespace cnorm {

enum class NormKind { none, bn, ln, modenorm, mixnorm, cn, cnx, acn };

NormKind parse_norm_kind(const std::string& s);
std::string to_string(NormKind k);
bool needs_contexts(NormKind k);  ///< cn, cnx
bool uses_k(NormKind k);          ///< every kind with K components or contexts

enum class Mode {
  train,        ///< batch statistics, running statistics updated, EM refreshed
  batch_stats,  ///< batch statistics, nothing updated
  eval,         ///< running statistics / learned parameters only
};

struct Pass {
  Mode mode = Mode::train;
  ContextIds ids{};  ///< per-sample contexts; required by cn and cnx
};

struct Param {
  std::string name;
  Tensor* value;
  Tensor* grad;
  bool decay;  ///< subject to weight decay
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, const Pass& pass) = 0;
  /// Gradient w.r.t. the input of the last forward; parameter gradients are
  /// written into the tensors exposed by params().
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void params(std::vector<Param>&) {}
  /// Non-trainable state worth checkpointing (running moments, mixtures).
  virtual void buffers(std::vector<std::pair<std::string, Tensor*>>&) {}
};

struct MixNormSchedule {
  std::size_t refresh_every = 50;  ///< training steps between EM refreshes
  std::size_t em_iters = 5;        ///< EM iterations per refresh (and for the first fit)
  std::size_t buffer_rows = 8192;  ///< activation positions kept for a refresh
};

enum class LayerType { dense, conv3x3, relu, leaky_relu, norm, flatten, classifier };

struct LayerSpec {
  LayerType type;
  std::size_t out = 0;  ///< dense units / conv output channels
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::size_t channels = 1, length = 1;  ///< input [C, L]
  std::size_t height = 0, width = 0;     ///< L = height * width, needed by conv layers
  std::size_t classes = 2;
  NormKind norm = NormKind::bn;
  std::size_t k = 1;  ///< components/contexts for multi-mode norms
  Tensor lambdas;     ///< context proportions for cn / cnx
  MixNormSchedule mixnorm;
};

/// dense(h)-norm-relu per hidden width, then the classifier.
ModelSpec mlp_spec(std::size_t inputs, std::size_t classes, std::vector<std::size_t> hidden = {64, 64});
/// conv3x3(16)-norm-relu x2, flatten, dense(64)-norm-relu, classifier.
ModelSpec small_cnn_spec(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes);

// Norm layers, exposed so tests and checkpoints can reach their state.
class BnLayer;
class LnLayer;
class ModeNormLayer;
class MixNormLayer;
class CnLayer;
class CnxLayer;
class AcnLayer;

class Model {
 public:
  /// Weights come from per-layer streams of `seed`, so the non-norm layers
  /// start identical whatever the norm kind.
  Model(const ModelSpec& spec, std::uint64_t seed);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelSpec& spec() const { return spec_; }
  NormKind norm() const { return spec_.norm; }

  /// Logits [N, classes].
  Tensor forward(const Tensor& x, const Pass& pass);
  /// Back-propagates d loss / d logits through every layer.
  void backward(const Tensor& dlogits);

  std::vector<Param> params();
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<Layer*> layers();
  std::vector<Layer*> norm_layers();

  /// True once a training-mode pass has populated running statistics.
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  bool trained_ = false;
};

// ------------------------------------------------------------- concrete norms

class BnLayer final : public Layer {
 public:
  explicit BnLayer(std::size_t channels) : state(BnState::create(channels)) {}
  std::string kind() const override { return "bn"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  void buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;
  BnState state;

 private:
  BnCache cache_;
  Tensor dgamma_, dbeta_;
};

class LnLayer final : public Layer {
 public:
  explicit LnLayer(std::size_t channels) : gamma(Tensor({channels}, 1.0)), beta(Tensor({channels}, 0.0)) {}
  std::string kind() const override { return "ln"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  Tensor gamma, beta;
  double eps = kDefaultEps;

 private:
  LnCache cache_;
  Tensor dgamma_, dbeta_;
};

class ModeNormLayer final : public Layer {
 public:
  ModeNormLayer(std::size_t k, std::size_t channels, Rng& rng) : state(ModeNormState::create(k, channels, rng)) {}
  std::string kind() const override { return "modenorm"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  void buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;
  ModeNormState state;

 private:
  ModeNormCache cache_;
  ModeNormGrads grads_;
};

class MixNormLayer final : public Layer {
 public:
  MixNormLayer(std::size_t k, std::size_t channels, const MixNormSchedule& schedule, Rng rng)
      : state(MixNormState::create(k, channels)), schedule_(schedule), rng_(rng) {}
  std::string kind() const override { return "mixnorm"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  void buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;
  MixNormState state;
  std::size_t em_refreshes() const { return refreshes_; }

 private:
  void remember(const Tensor& positions);
  MixNormSchedule schedule_;
  Rng rng_;
  MixNormCache cache_;
  Tensor dgamma_, dbeta_;
  std::vector<double> buffer_;  ///< rows of recent activation positions
  std::size_t steps_since_refresh_ = 0;
  std::size_t refreshes_ = 0;
};

class CnLayer final : public Layer {
 public:
  CnLayer(const Tensor& lambdas, std::size_t channels) : state(CnState::create(lambdas, channels)) {}
  std::string kind() const override { return "cn"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  void buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;
  CnState state;

 private:
  CnCache cache_;
  std::vector<std::size_t> ids_;
  Tensor dgamma_, dbeta_;
};

class CnxLayer final : public Layer {
 public:
  CnxLayer(const Tensor& lambdas, std::size_t channels, Rng& rng) : p(CnxParams::create(lambdas, channels, rng)) {}
  std::string kind() const override { return "cnx"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  void buffers(std::vector<std::pair<std::string, Tensor*>>& out) override;
  CnxParams p;

 private:
  CnxCache cache_;
  CnxGrads grads_;
};

class AcnLayer final : public Layer {
 public:
  AcnLayer(std::size_t k, std::size_t channels, Rng& rng) : p(acn_init(k, channels, rng)) {}
  std::string kind() const override { return "acn"; }
  Tensor forward(const Tensor& x, const Pass& pass) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<Param>& out) override;
  AcnParams p;

 private:
  AcnCache cache_;
  AcnGrads grads_;
};

}  // namespace cnorm
