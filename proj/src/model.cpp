#include "cnorm/model.hpp"

#include <algorithm>
#include <cmath>

#include "cnorm/error.hpp"
#include "cnorm/gmm.hpp"
#include "cnorm/kernels.hpp"

namespace cnorm {
namespace {

// Stream ids: weights and norm layers draw from disjoint per-slot streams.
constexpr std::uint64_t kWeightStream = 0x1000;
constexpr std::uint64_t kNormStream = 0x2000;

Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng, double gain = 2.0) {
  Tensor w(shape);
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = rng.normal(0.0, sd);
  return w;
}

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, Rng& rng, bool head)
      : w_(he_normal({out, in}, in, rng, head ? 1.0 : 2.0)), b_({out}), dw_({out, in}), db_({out}), head_(head) {}
  std::string kind() const override { return head_ ? "classifier" : "dense"; }

  Tensor forward(const Tensor& x, const Pass&) override {
    const std::size_t n = x.dim(0);
    if (x.size() / n != w_.dim(1))
      throw ShapeError("dense: input has " + std::to_string(x.size() / n) + " features, layer expects " +
                       std::to_string(w_.dim(1)));
    x_ = x;
    Tensor y({n, w_.dim(0), 1});
    kernels::dense_forward(x, w_, b_, y);
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape());
    kernels::dense_backward(x_, w_, dy, dx, dw_, db_);
    return dx;
  }

  void params(std::vector<Param>& out) override {
    out.push_back({kind() + ".weight", &w_, &dw_, true});
    out.push_back({kind() + ".bias", &b_, &db_, false});
  }

 private:
  Tensor w_, b_, dw_, db_, x_;
  bool head_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::size_t ci, std::size_t co, std::size_t h, std::size_t w, Rng& rng)
      : w_(he_normal({co, ci, 9}, ci * 9, rng)), b_({co}), dw_({co, ci, 9}), db_({co}), h_(h), wd_(w) {}
  std::string kind() const override { return "conv3x3"; }

  Tensor forward(const Tensor& x, const Pass&) override {
    require_rank(x, 3, "conv3x3");
    if (x.dim(1) != w_.dim(1) || x.dim(2) != h_ * wd_) throw ShapeError("conv3x3: input is " + shape_string(x.shape()));
    x_ = x;
    Tensor y({x.dim(0), w_.dim(0), h_ * wd_});
    kernels::conv3x3_forward(x, w_, b_, h_, wd_, y);
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.shape());
    kernels::conv3x3_backward(x_, w_, dy, h_, wd_, dx, dw_, db_);
    return dx;
  }

  void params(std::vector<Param>& out) override {
    out.push_back({"conv3x3.weight", &w_, &dw_, true});
    out.push_back({"conv3x3.bias", &b_, &db_, false});
  }

 private:
  Tensor w_, b_, dw_, db_, x_;
  std::size_t h_, wd_;
};

class ReluLayer final : public Layer {
 public:
  explicit ReluLayer(double slope) : slope_(slope) {}
  std::string kind() const override { return slope_ == 0.0 ? "relu" : "leaky_relu"; }

  Tensor forward(const Tensor& x, const Pass&) override {
    x_ = x;
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = x_[i] > 0.0 ? dy[i] : slope_ * dy[i];
    return dx;
  }

 private:
  double slope_;
  Tensor x_;
};

class FlattenLayer final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, const Pass&) override {
    in_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0), 1});
  }
  Tensor backward(const Tensor& dy) override { return dy.reshaped(in_); }

 private:
  Shape in_;
};

ContextIds need_ids(const Pass& pass, std::size_t n, const char* who) {
  if (pass.ids.empty()) throw ConfigError(std::string(who) + ": context ids are required for this model");
  if (pass.ids.size() != n) throw ShapeError(std::string(who) + ": context ids do not match the batch");
  return pass.ids;
}

void add_affine(std::vector<Param>& out, const std::string& kind, Tensor& gamma, Tensor& dgamma, Tensor& beta,
                Tensor& dbeta) {
  out.push_back({kind + ".gamma", &gamma, &dgamma, false});
  out.push_back({kind + ".beta", &beta, &dbeta, false});
}

}  // namespace

NormKind parse_norm_kind(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "bn") return NormKind::bn;
  if (s == "ln") return NormKind::ln;
  if (s == "modenorm") return NormKind::modenorm;
  if (s == "mixnorm") return NormKind::mixnorm;
  if (s == "cn") return NormKind::cn;
  if (s == "cnx") return NormKind::cnx;
  if (s == "acn") return NormKind::acn;
  throw ConfigError("unknown norm kind '" + s + "'");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::none: return "none";
    case NormKind::bn: return "bn";
    case NormKind::ln: return "ln";
    case NormKind::modenorm: return "modenorm";
    case NormKind::mixnorm: return "mixnorm";
    case NormKind::cn: return "cn";
    case NormKind::cnx: return "cnx";
    case NormKind::acn: return "acn";
  }
  return "?";
}

bool needs_contexts(NormKind k) { return k == NormKind::cn || k == NormKind::cnx; }
bool uses_k(NormKind k) {
  return k == NormKind::modenorm || k == NormKind::mixnorm || k == NormKind::cn || k == NormKind::cnx ||
         k == NormKind::acn;
}

// ------------------------------------------------------------------ norms

Tensor BnLayer::forward(const Tensor& x, const Pass& pass) {
  if (pass.mode == Mode::eval) return bn_forward_eval(x, state);
  auto fw = bn_forward_train(x, state);
  if (pass.mode == Mode::train) bn_update_running(state, fw.cache.mean, fw.cache.var);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor BnLayer::backward(const Tensor& dy) {
  BnGrads g = bn_backward(cache_, dy);
  dgamma_ = std::move(g.dgamma);
  dbeta_ = std::move(g.dbeta);
  return std::move(g.dx);
}

void BnLayer::params(std::vector<Param>& out) {
  if (dgamma_.empty()) dgamma_ = dbeta_ = Tensor(state.gamma.shape());
  add_affine(out, "bn", state.gamma, dgamma_, state.beta, dbeta_);
}

void BnLayer::buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back("bn.running_mean", &state.running_mean);
  out.emplace_back("bn.running_var", &state.running_var);
}

Tensor LnLayer::forward(const Tensor& x, const Pass&) {
  auto fw = ln_forward(x, gamma, beta, eps);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor LnLayer::backward(const Tensor& dy) {
  BnGrads g = ln_backward(cache_, dy);
  dgamma_ = std::move(g.dgamma);
  dbeta_ = std::move(g.dbeta);
  return std::move(g.dx);
}

void LnLayer::params(std::vector<Param>& out) {
  if (dgamma_.empty()) dgamma_ = dbeta_ = Tensor(gamma.shape());
  add_affine(out, "ln", gamma, dgamma_, beta, dbeta_);
}

Tensor ModeNormLayer::forward(const Tensor& x, const Pass& pass) {
  if (pass.mode == Mode::eval) return modenorm_forward_eval(x, state);
  auto fw = modenorm_forward_train(x, state, pass.mode == Mode::train);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor ModeNormLayer::backward(const Tensor& dy) {
  grads_ = modenorm_backward(cache_, dy);
  return std::move(grads_.dx);
}

void ModeNormLayer::params(std::vector<Param>& out) {
  if (grads_.dgamma.empty())
    grads_ = {Tensor(), Tensor(state.gamma.shape()), Tensor(state.beta.shape()), Tensor(state.gate_weight.shape()),
              Tensor(state.gate_bias.shape())};
  add_affine(out, "modenorm", state.gamma, grads_.dgamma, state.beta, grads_.dbeta);
  out.push_back({"modenorm.gate_weight", &state.gate_weight, &grads_.dgate_weight, false});
  out.push_back({"modenorm.gate_bias", &state.gate_bias, &grads_.dgate_bias, false});
}

void ModeNormLayer::buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back("modenorm.running_mean", &state.running_mean);
  out.emplace_back("modenorm.running_var", &state.running_var);
}

void MixNormLayer::remember(const Tensor& positions) {
  // Keep an evenly strided share of each batch so a full refresh window
  // fits in buffer_rows.
  const std::size_t rows = positions.dim(0), d = positions.dim(1);
  const std::size_t quota = std::max<std::size_t>(1, schedule_.buffer_rows / std::max<std::size_t>(1, schedule_.refresh_every));
  const std::size_t stride = std::max<std::size_t>(1, rows / quota);
  for (std::size_t r = 0; r < rows; r += stride)
    buffer_.insert(buffer_.end(), positions.row(r).begin(), positions.row(r).begin() + d);
}

Tensor MixNormLayer::forward(const Tensor& x, const Pass& pass) {
  if (pass.mode == Mode::eval) return mixnorm_forward_eval(x, state);
  const std::size_t k = state.components();
  if (!state.fitted) {
    const Tensor pos = positions_matrix(x);
    if (pos.dim(0) < k) throw DegenerateError("mixnorm: batch has fewer positions than components");
    if (pass.mode != Mode::train) {
      // Untrained: fit a throwaway mixture on this batch without keeping it.
      Rng scratch = rng_;
      auto fw = mixnorm_forward(x, em_fit(pos, k, scratch, schedule_.em_iters), state.gamma, state.beta, state.eps);
      cache_ = std::move(fw.cache);
      return std::move(fw.y);
    }
    state.gmm = em_fit(pos, k, rng_, schedule_.em_iters);
    state.fitted = true;
    ++refreshes_;
  } else if (pass.mode == Mode::train && steps_since_refresh_ >= schedule_.refresh_every && !buffer_.empty()) {
    const std::size_t d = state.channels();
    const std::size_t rows = buffer_.size() / d;
    Tensor window({rows, d}, std::move(buffer_));
    buffer_.clear();
    if (window.dim(0) >= k) state.gmm = em_refine(window, state.gmm, schedule_.em_iters).gmm;
    steps_since_refresh_ = 0;
    ++refreshes_;
  }

  auto fw = mixnorm_forward(x, state.gmm, state.gamma, state.beta, state.eps);
  if (pass.mode == Mode::train) {
    mixnorm_update_running(state, fw.cache.mean, fw.cache.var);
    remember(positions_matrix(x));
    ++steps_since_refresh_;
  }
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor MixNormLayer::backward(const Tensor& dy) {
  BnGrads g = mixnorm_backward(cache_, dy);
  dgamma_ = std::move(g.dgamma);
  dbeta_ = std::move(g.dbeta);
  return std::move(g.dx);
}

void MixNormLayer::params(std::vector<Param>& out) {
  if (dgamma_.empty()) dgamma_ = dbeta_ = Tensor(state.gamma.shape());
  add_affine(out, "mixnorm", state.gamma, dgamma_, state.beta, dbeta_);
}

void MixNormLayer::buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back("mixnorm.weights", &state.gmm.weights);
  out.emplace_back("mixnorm.means", &state.gmm.means);
  out.emplace_back("mixnorm.vars", &state.gmm.vars);
  out.emplace_back("mixnorm.running_mean", &state.running_mean);
  out.emplace_back("mixnorm.running_var", &state.running_var);
}

Tensor CnLayer::forward(const Tensor& x, const Pass& pass) {
  const ContextIds ids = need_ids(pass, x.dim(0), "cn");
  if (pass.mode == Mode::eval) return cn_forward_eval(x, ids, state);
  auto fw = cn_forward_train(x, ids, state, pass.mode == Mode::train);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor CnLayer::backward(const Tensor& dy) {
  CnGrads g = cn_backward(cache_, dy);
  dgamma_ = std::move(g.dgamma);
  dbeta_ = std::move(g.dbeta);
  return std::move(g.dx);
}

void CnLayer::params(std::vector<Param>& out) {
  if (dgamma_.empty()) dgamma_ = dbeta_ = Tensor(state.gamma.shape());
  add_affine(out, "cn", state.gamma, dgamma_, state.beta, dbeta_);
}

void CnLayer::buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back("cn.lambdas", &state.lambdas);
  out.emplace_back("cn.running_mean", &state.running_mean);
  out.emplace_back("cn.running_var", &state.running_var);
}

Tensor CnxLayer::forward(const Tensor& x, const Pass& pass) {
  auto fw = cnx_forward(x, need_ids(pass, x.dim(0), "cnx"), p);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor CnxLayer::backward(const Tensor& dy) {
  grads_ = cnx_backward(cache_, dy);
  return std::move(grads_.dx);
}

void CnxLayer::params(std::vector<Param>& out) {
  if (grads_.dgamma.empty())
    grads_ = {Tensor(), Tensor(p.gamma.shape()), Tensor(p.beta.shape()), Tensor(p.mu.shape()), Tensor(p.log_var.shape())};
  add_affine(out, "cnx", p.gamma, grads_.dgamma, p.beta, grads_.dbeta);
  out.push_back({"cnx.mu", &p.mu, &grads_.dmu, false});
  out.push_back({"cnx.log_var", &p.log_var, &grads_.dlog_var, false});
}

void CnxLayer::buffers(std::vector<std::pair<std::string, Tensor*>>& out) { out.emplace_back("cnx.lambdas", &p.lambdas); }

Tensor AcnLayer::forward(const Tensor& x, const Pass&) {
  auto fw = acn_forward(x, p);
  cache_ = std::move(fw.cache);
  return std::move(fw.y);
}

Tensor AcnLayer::backward(const Tensor& dy) {
  grads_ = acn_backward(cache_, dy);
  return std::move(grads_.dx);
}

void AcnLayer::params(std::vector<Param>& out) {
  if (grads_.dgamma.empty())
    grads_ = {Tensor(),
              Tensor(p.gamma.shape()),
              Tensor(p.beta.shape()),
              Tensor(p.logit_lambda.shape()),
              Tensor(p.mu.shape()),
              Tensor(p.log_var.shape())};
  add_affine(out, "acn", p.gamma, grads_.dgamma, p.beta, grads_.dbeta);
  out.push_back({"acn.logit_lambda", &p.logit_lambda, &grads_.dlogit_lambda, false});
  out.push_back({"acn.mu", &p.mu, &grads_.dmu, false});
  out.push_back({"acn.log_var", &p.log_var, &grads_.dlog_var, false});
}

// ------------------------------------------------------------------ model

ModelSpec mlp_spec(std::size_t inputs, std::size_t classes, std::vector<std::size_t> hidden) {
  ModelSpec s;
  s.channels = inputs;
  s.length = 1;
  s.classes = classes;
  for (auto h : hidden) {
    s.layers.push_back({LayerType::dense, h});
    s.layers.push_back({LayerType::norm});
    s.layers.push_back({LayerType::relu});
  }
  s.layers.push_back({LayerType::classifier, classes});
  return s;
}

ModelSpec small_cnn_spec(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes) {
  ModelSpec s;
  s.channels = channels;
  s.length = height * width;
  s.height = height;
  s.width = width;
  s.classes = classes;
  s.layers = {{LayerType::conv3x3, 16}, {LayerType::norm},  {LayerType::relu},
              {LayerType::conv3x3, 16}, {LayerType::norm},  {LayerType::relu},
              {LayerType::flatten},     {LayerType::dense, 64}, {LayerType::norm},
              {LayerType::relu},        {LayerType::classifier, classes}};
  return s;
}

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  std::size_t c = spec.channels, l = spec.length;
  if (c == 0 || l == 0) throw ConfigError("model input shape must be non-empty");
  if (uses_k(spec.norm) && spec.k == 0) throw ConfigError("norm '" + to_string(spec.norm) + "' needs K >= 1");
  if (needs_contexts(spec.norm)) {
    if (spec.lambdas.size() != spec.k)
      throw ConfigError("norm '" + to_string(spec.norm) + "' needs " + std::to_string(spec.k) + " context proportions");
  }
  std::size_t heads = 0;
  for (std::size_t slot = 0; slot < spec.layers.size(); ++slot) {
    const LayerSpec& ls = spec.layers[slot];
    Rng wrng(seed, kWeightStream + slot);
    Rng nrng(seed, kNormStream + slot);
    if (heads) throw ConfigError("model spec: layers after the classifier head");
    switch (ls.type) {
      case LayerType::dense:
      case LayerType::classifier:
        if (ls.out == 0) throw ConfigError("model spec: dense layer with zero units");
        layers_.push_back(std::make_unique<DenseLayer>(c * l, ls.out, wrng, ls.type == LayerType::classifier));
        c = ls.out;
        l = 1;
        if (ls.type == LayerType::classifier) {
          ++heads;
          if (ls.out != spec.classes) throw ConfigError("model spec: classifier width differs from class count");
        }
        break;
      case LayerType::conv3x3:
        if (spec.height * spec.width != l || l == 1)
          throw ConfigError("model spec: conv3x3 needs a spatial input (height * width = L)");
        layers_.push_back(std::make_unique<ConvLayer>(c, ls.out, spec.height, spec.width, wrng));
        c = ls.out;
        break;
      case LayerType::relu: layers_.push_back(std::make_unique<ReluLayer>(0.0)); break;
      case LayerType::leaky_relu: layers_.push_back(std::make_unique<ReluLayer>(0.01)); break;
      case LayerType::flatten:
        layers_.push_back(std::make_unique<FlattenLayer>());
        c *= l;
        l = 1;
        break;
      case LayerType::norm:
        switch (spec.norm) {
          case NormKind::none: break;
          case NormKind::bn: layers_.push_back(std::make_unique<BnLayer>(c)); break;
          case NormKind::ln: layers_.push_back(std::make_unique<LnLayer>(c)); break;
          case NormKind::modenorm: layers_.push_back(std::make_unique<ModeNormLayer>(spec.k, c, nrng)); break;
          case NormKind::mixnorm:
            layers_.push_back(std::make_unique<MixNormLayer>(spec.k, c, spec.mixnorm, nrng));
            break;
          case NormKind::cn: layers_.push_back(std::make_unique<CnLayer>(spec.lambdas, c)); break;
          case NormKind::cnx: layers_.push_back(std::make_unique<CnxLayer>(spec.lambdas, c, nrng)); break;
          case NormKind::acn: layers_.push_back(std::make_unique<AcnLayer>(spec.k, c, nrng)); break;
        }
        break;
    }
  }
  if (heads != 1) throw ConfigError("model spec needs exactly one classifier head");
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

Tensor Model::forward(const Tensor& x, const Pass& pass) {
  require_rank(x, 3, "model input");
  if (x.dim(1) != spec_.channels || x.dim(2) != spec_.length)
    throw ShapeError("model input is " + shape_string(x.shape()) + ", expected [N, " + std::to_string(spec_.channels) +
                     ", " + std::to_string(spec_.length) + "]");
  if (needs_contexts(spec_.norm) && pass.ids.empty())
    throw ConfigError("model with " + to_string(spec_.norm) + " layers needs context ids");
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, pass);
  return h.reshaped({h.dim(0), h.dim(1)});
}

void Model::backward(const Tensor& dlogits) {
  Tensor g = dlogits.reshaped({dlogits.dim(0), dlogits.dim(1), 1});
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
}

std::vector<Param> Model::params() {
  std::vector<Param> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t first = out.size();
    layers_[i]->params(out);
    for (std::size_t j = first; j < out.size(); ++j) out[j].name = std::to_string(i) + "." + out[j].name;
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Model::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::size_t first = out.size();
    layers_[i]->buffers(out);
    for (std::size_t j = first; j < out.size(); ++j) out[j].first = std::to_string(i) + "." + out[j].first;
  }
  return out;
}

std::vector<Layer*> Model::layers() {
  std::vector<Layer*> out;
  for (auto& l : layers_) out.push_back(l.get());
  return out;
}

std::vector<Layer*> Model::norm_layers() {
  std::vector<Layer*> out;
  for (auto& l : layers_) {
    const std::string k = l->kind();
    if (k != "dense" && k != "classifier" && k != "conv3x3" && k != "relu" && k != "leaky_relu" && k != "flatten")
      out.push_back(l.get());
  }
  return out;
}

}  // namespace cnorm
