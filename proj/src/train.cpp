#include "cnorm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cnorm/error.hpp"

namespace cnorm {
namespace {

// [begin, end) batches over n items; a trailing batch of one sample is merged
// into its predecessor because batch statistics need two values.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (std::size_t b = 0; b < n; b += batch) r.emplace_back(b, std::min(n, b + batch));
  if (r.size() > 1 && r.back().second - r.back().first < 2) {
    r[r.size() - 2].second = r.back().second;
    r.pop_back();
  }
  return r;
}

Tensor gather(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t per = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t a = 0; a < idx.size(); ++a) std::copy_n(x.data() + idx[a] * per, per, out.data() + a * per);
  return out;
}

template <class T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  if (v.empty()) return out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

std::size_t argmax_row(const Tensor& p, std::size_t i) {
  const std::size_t k = p.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (p.at(i, j) > p.at(i, best)) best = j;
  return best;
}

void check_set(const Model& model, const TrainData& set, const char* what) {
  if (!set.data) throw ConfigError(std::string(what) + ": no dataset");
  if (needs_contexts(model.norm()) && set.contexts.size() != set.data->size())
    throw ConfigError(std::string(what) + ": " + to_string(model.norm()) + " needs one context id per sample");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd" || s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "step") return ScheduleKind::step;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

double scheduled_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total) {
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  const double frac = total == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(total);
  switch (cfg.schedule) {
    case ScheduleKind::constant: return cfg.lr;
    case ScheduleKind::step: {
      double lr = cfg.lr;
      for (double m : cfg.milestones)
        if (frac >= m) lr *= cfg.decay;
      return lr;
    }
    case ScheduleKind::cosine: return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return cfg.lr;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}

void Optimizer::step(const std::vector<Param>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value->shape());
      if (cfg_.kind == OptimizerKind::adam) v_.emplace_back(p.value->shape());
    }
  }
  if (m_.size() != params.size()) throw StateError("optimizer: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t a = 0; a < params.size(); ++a) {
    Tensor& w = *params[a].value;
    const Tensor& g = *params[a].grad;
    const double wd = params[a].decay ? cfg_.weight_decay : 0.0;
    Tensor& m = m_[a];
    if (cfg_.kind == OptimizerKind::sgd_momentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.momentum * m[i] + g[i] + wd * w[i];
        w[i] -= lr * m[i];
      }
    } else {
      Tensor& v = v_[a];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + wd * w[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
      }
    }
  }
}

LossResult forward_loss(Model& model, const Tensor& x, std::span<const std::size_t> labels, const Pass& pass) {
  const Tensor logits = model.forward(x, pass);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("forward_loss: label count differs from batch size");
  LossResult r{0.0, Tensor({n, k}), std::vector<std::size_t>(labels.begin(), labels.end())};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ConfigError("label " + std::to_string(labels[i]) + " outside the classifier range");
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits.at(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) r.probs.at(i, j) = std::exp(logits.at(i, j) - lse);
    r.loss += lse - logits.at(i, labels[i]);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

void backward_and_step(Model& model, const LossResult& result, Optimizer& opt, double lr, std::size_t step) {
  if (!std::isfinite(result.loss)) throw DivergenceError(step, "loss is not finite");
  const std::size_t n = result.probs.dim(0);
  Tensor d = result.probs;
  for (std::size_t i = 0; i < n; ++i) d.at(i, result.labels[i]) -= 1.0;
  for (auto& v : d.values()) v /= static_cast<double>(n);
  model.backward(d);
  const auto params = model.params();
  for (const auto& p : params)
    if (!p.grad->all_finite()) throw DivergenceError(step, "non-finite gradient in " + p.name);
  opt.step(params, lr);
}

Metrics classification_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                               std::size_t classes) {
  if (predicted.size() != labels.size()) throw ShapeError("metrics: prediction/label count mismatch");
  Metrics m;
  if (labels.empty()) return m;
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] == labels[i]) {
      ++correct;
      tp[labels[i]] += 1;
    } else {
      fp[predicted[i]] += 1;
      fn[labels[i]] += 1;
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (tp[c] + fn[c] == 0) continue;
    ++present;
    const double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double r = tp[c] / (tp[c] + fn[c]);
    m.precision += p;
    m.recall += r;
    m.f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  m.precision /= static_cast<double>(present);
  m.recall /= static_cast<double>(present);
  m.f1 /= static_cast<double>(present);
  return m;
}

void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "epoch,split,loss,accuracy,precision,recall,f1\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << r.split << ',' << fmt(r.m.loss) << ',' << fmt(r.m.accuracy) << ','
        << fmt(r.m.precision) << ',' << fmt(r.m.recall) << ',' << fmt(r.m.f1) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

std::vector<MetricRow> read_metric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,loss,accuracy,precision,recall,f1")
    throw FormatError(path + ": unexpected header");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 7 fields");
    try {
      MetricRow r;
      std::size_t used = 0;
      r.epoch = std::stoul(f[0], &used);
      r.split = f[1];
      r.m = {std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

Metrics evaluate(Model& model, const TrainData& set, std::size_t batch_size) {
  check_set(model, set, "evaluate");
  const Dataset& ds = *set.data;
  const Pass base{model.trained() ? Mode::eval : Mode::batch_stats, {}};
  std::vector<std::size_t> pred(ds.size());
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (auto [b, e] : batch_ranges(ds.size(), batch_size)) {
    idx.resize(e - b);
    for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
    Pass pass = base;
    if (!set.contexts.empty()) pass.ids = set.contexts.subspan(b, e - b);
    const LossResult r = forward_loss(model, gather(ds.x, idx), std::span(ds.labels).subspan(b, e - b), pass);
    loss += r.loss * static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i) pred[i] = argmax_row(r.probs, i - b);
  }
  Metrics m = classification_metrics(pred, ds.labels, std::max(ds.classes, model.spec().classes));
  m.loss = loss / static_cast<double>(ds.size());
  return m;
}

MetricLog train(Model& model, const TrainData& train_set, const TrainConfig& cfg, const TrainData* test,
                const StepCallback& on_step) {
  check_set(model, train_set, "train");
  if (test) check_set(model, *test, "train (test split)");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be >= 1");
  const Dataset& ds = *train_set.data;
  MetricLog log;
  if (cfg.epochs == 0) return log;

  Optimizer opt(cfg.optimizer);
  Rng shuffle(cfg.seed, 0x7a1);
  const auto ranges = batch_ranges(ds.size(), cfg.batch_size);
  const std::size_t total = cfg.epochs * ranges.size();
  std::size_t step = 0;
  const std::size_t classes = std::max(ds.classes, model.spec().classes);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = permutation(ds.size(), shuffle);
    std::vector<std::size_t> pred, seen;
    double loss = 0.0;
    for (auto [b, e] : ranges) {
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const auto labels = pick<std::size_t>(ds.labels, idx);
      const auto ids = pick<std::size_t>(train_set.contexts, idx);
      const Pass pass{Mode::train, ids};
      const LossResult r = forward_loss(model, gather(ds.x, idx), labels, pass);
      model.mark_trained();
      backward_and_step(model, r, opt, scheduled_lr(cfg.optimizer, step, total), step + 1);
      ++step;
      loss += r.loss * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) pred.push_back(argmax_row(r.probs, i));
      seen.insert(seen.end(), labels.begin(), labels.end());
      if (on_step) on_step(step, model, r);
    }
    log.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    Metrics m = classification_metrics(pred, seen, classes);
    m.loss = loss / static_cast<double>(seen.size());
    log.rows.push_back({epoch, "train", m});
    if (test) log.rows.push_back({epoch, "test", evaluate(model, *test)});
  }
  return log;
}

}  // namespace cnorm
