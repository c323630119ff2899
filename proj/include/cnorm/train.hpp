#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cnorm/data.hpp"
#include "cnorm/model.hpp"

namespace cnorm {

// -------------------------------------------------------------- optimizer

enum class OptimizerKind { sgd_momentum, adam };
enum class ScheduleKind { constant, step, cosine };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 1e-4;  ///< L2 on dense/conv weights
  ScheduleKind schedule = ScheduleKind::constant;
  std::vector<double> milestones{0.5, 0.75};  ///< fractions of training for step decay
  double decay = 0.1;
};

OptimizerKind parse_optimizer(const std::string& s);
ScheduleKind parse_schedule(const std::string& s);

/// Learning rate for `step` (0-based) of `total` steps.
double scheduled_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total);

/// Classical (heavy-ball) momentum v <- mu v + g, p <- p - lr v; or Adam with
/// bias correction. Slots follow the order of the params vector.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);
  void step(const std::vector<Param>& params, double lr);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// ------------------------------------------------------------------- loss

struct LossResult {
  double loss = 0.0;
  Tensor probs;  ///< [N, classes]
  std::vector<std::size_t> labels;
};

/// Mean softmax cross-entropy of the model output.
LossResult forward_loss(Model& model, const Tensor& x, std::span<const std::size_t> labels, const Pass& pass);

/// Back-propagates the loss of the last train-mode forward and applies one
/// optimizer update. Throws DivergenceError on a non-finite gradient.
void backward_and_step(Model& model, const LossResult& result, Optimizer& opt, double lr, std::size_t step);

// ---------------------------------------------------------------- metrics

struct Metrics {
  double loss = 0.0, accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Macro-averaged over `classes`. A class never predicted has precision 0;
/// a class absent from the labels is skipped in the macro average.
Metrics classification_metrics(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                               std::size_t classes);

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;  ///< "train" or "test"
  Metrics m;
};

struct MetricLog {
  std::vector<MetricRow> rows;
  std::vector<double> epoch_seconds;  ///< wall clock of each training epoch
};

/// epoch,split,loss,accuracy,precision,recall,f1
void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_csv(const std::string& path);

// ------------------------------------------------------------------ train

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
};

/// Called after every optimizer step with the 1-based global step index.
using StepCallback = std::function<void(std::size_t step, Model& model, const LossResult& result)>;

struct TrainData {
  const Dataset* data = nullptr;
  std::span<const std::size_t> contexts;  ///< empty unless the model needs them
};

/// Per-epoch rows: the train row averages the minibatch losses and
/// predictions seen during the epoch; a test row (when `test` is given) is an
/// eval-mode pass after the epoch. Zero epochs yields an empty log.
MetricLog train(Model& model, const TrainData& train_set, const TrainConfig& cfg,
                const TrainData* test = nullptr, const StepCallback& on_step = {});

/// Metrics over a whole dataset in minibatches. Trained models use eval mode;
/// an untrained model is measured with batch statistics and no updates.
Metrics evaluate(Model& model, const TrainData& set, std::size_t batch_size = 256);

}  // namespace cnorm
