#include <doctest.h>

#include <cmath>

#include "cnorm/contexts.hpp"
#include "cnorm/error.hpp"
#include "cnorm/train.hpp"
#include "helpers.hpp"

using namespace cnorm;

namespace {

ModelSpec with_norm(ModelSpec s, NormKind kind, std::size_t k) {
  s.norm = kind;
  s.k = k;
  if (needs_contexts(kind)) {
    s.lambdas = Tensor({k});
    for (std::size_t j = 0; j < k; ++j) s.lambdas[j] = 1.0 / static_cast<double>(k);
  }
  return s;
}

// Normwise relative error, over all parameters at once, between the model's
// gradients and central differences of the batch-statistics loss. Per tensor
// would be wrong: a bias feeding a batch-statistics norm has exactly zero
// gradient, and finite-difference noise over zero is not an error.
double model_grad_error(Model& m, const Tensor& x, const std::vector<std::size_t>& labels,
                        const std::vector<std::size_t>& ids) {
  const Pass pass{Mode::batch_stats, ids};
  const LossResult r = forward_loss(m, x, labels, pass);
  Tensor d = r.probs;
  for (std::size_t i = 0; i < labels.size(); ++i) d.at(i, labels[i]) -= 1.0;
  for (auto& v : d.values()) v /= static_cast<double>(labels.size());
  m.backward(d);
  std::vector<double> analytic, numeric;
  for (const Param& p : m.params()) {
    analytic.insert(analytic.end(), p.grad->values().begin(), p.grad->values().end());
    Tensor& w = *p.value;
    const double h = 1e-6;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = forward_loss(m, x, labels, pass).loss;
      w[i] = saved - h;
      const double down = forward_loss(m, x, labels, pass).loss;
      w[i] = saved;
      numeric.push_back((up - down) / (2 * h));
    }
  }
  const std::size_t n = analytic.size();
  return relative_error(Tensor({n}, analytic), Tensor({n}, numeric));
}

Dataset easy_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return gen_synthetic_gmm(2, n, 4, 8.0, rng);
}

}  // namespace

TEST_CASE("whole-model gradients") {
  Rng rng(61);
  const std::vector<std::size_t> labels{0, 1, 2, 1, 0, 2};
  const std::vector<std::size_t> ids{0, 1, 0, 1, 0, 1};

  SUBCASE("mlp") {
    const Tensor x = testing::randn({6, 5, 1}, rng);
    for (NormKind kind : {NormKind::none, NormKind::bn, NormKind::ln, NormKind::modenorm, NormKind::cn,
                          NormKind::cnx, NormKind::acn}) {
      CAPTURE(to_string(kind));
      Model m(with_norm(mlp_spec(5, 3, {6, 4}), kind, 2), 3);
      CHECK(model_grad_error(m, x, labels, ids) < 1e-5);
    }
  }
  SUBCASE("small cnn") {
    const Tensor x = testing::randn({6, 1, 16}, rng);
    for (NormKind kind : {NormKind::bn, NormKind::cn, NormKind::acn}) {
      CAPTURE(to_string(kind));
      ModelSpec s = small_cnn_spec(1, 4, 4, 3);
      s.layers[0].out = s.layers[3].out = 2;
      s.layers[7].out = 5;
      Model m(with_norm(s, kind, 2), 4);
      CHECK(model_grad_error(m, x, labels, ids) < 1e-5);
    }
  }
}

TEST_CASE("weights do not depend on the norm kind") {
  Model a(with_norm(mlp_spec(4, 2), NormKind::bn, 1), 9);
  Model b(with_norm(mlp_spec(4, 2), NormKind::acn, 3), 9);
  CHECK(*a.params()[0].value == *b.params()[0].value);
  CHECK(a.params()[0].name == "0.dense.weight");
  Model c(with_norm(mlp_spec(4, 2), NormKind::bn, 1), 10);
  CHECK_FALSE(*a.params()[0].value == *c.params()[0].value);
}

TEST_CASE("model spec validation") {
  ModelSpec s0 = mlp_spec(4, 2);
  s0.norm = NormKind::acn;
  s0.k = 0;
  CHECK_THROWS_AS(Model(s0, 1), ConfigError);
  ModelSpec s = with_norm(mlp_spec(4, 2), NormKind::cn, 2);
  s.lambdas = Tensor({3}, 1.0 / 3);
  CHECK_THROWS_AS(Model(s, 1), ConfigError);
  CHECK_THROWS_AS(Model(small_cnn_spec(1, 0, 0, 2), 1), ConfigError);
  Model m(with_norm(mlp_spec(4, 2), NormKind::cn, 2), 1);
  CHECK_THROWS_AS(m.forward(Tensor({2, 4, 1}), Pass{}), ConfigError);
  CHECK_THROWS_AS(m.forward(Tensor({2, 3, 1}), Pass{}), ShapeError);
}

TEST_CASE("optimizers") {
  Tensor w({2}, {1.0, -2.0}), g({2}, {0.5, 0.25});
  const std::vector<Param> params{{"w", &w, &g, true}};

  SUBCASE("heavy-ball momentum with decay") {
    OptimizerConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.1;
    Optimizer opt(cfg);
    opt.step(params, 0.1);
    // v = g + wd w = (0.6, 0.05)
    CHECK(w[0] == doctest::Approx(1.0 - 0.06));
    CHECK(w[1] == doctest::Approx(-2.0 - 0.005));
    const double v0 = 0.6, w0 = w[0];
    opt.step(params, 0.1);
    CHECK(w[0] == doctest::Approx(w0 - 0.1 * (0.9 * v0 + 0.5 + 0.1 * w0)));
  }
  SUBCASE("adam first step is lr * sign(g)") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::adam;
    cfg.weight_decay = 0.0;
    Optimizer opt(cfg);
    opt.step(params, 0.01);
    CHECK(w[0] == doctest::Approx(0.99).epsilon(1e-7));
    CHECK(w[1] == doctest::Approx(-2.01).epsilon(1e-7));
  }
  SUBCASE("decay skips biases and norm parameters") {
    OptimizerConfig cfg;
    cfg.weight_decay = 1.0;
    Tensor zero({2});
    const std::vector<Param> p{{"b", &w, &zero, false}};
    Optimizer opt(cfg);
    opt.step(p, 0.1);
    CHECK(w == Tensor({2}, {1.0, -2.0}));
  }
}

TEST_CASE("learning-rate schedules") {
  OptimizerConfig cfg;
  cfg.lr = 1.0;
  CHECK(scheduled_lr(cfg, 70, 100) == 1.0);
  cfg.schedule = ScheduleKind::step;
  CHECK(scheduled_lr(cfg, 49, 100) == 1.0);
  CHECK(scheduled_lr(cfg, 50, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(cfg, 80, 100) == doctest::Approx(0.01));
  cfg.schedule = ScheduleKind::cosine;
  CHECK(scheduled_lr(cfg, 0, 100) == 1.0);
  CHECK(scheduled_lr(cfg, 50, 100) == doctest::Approx(0.5));
  CHECK(scheduled_lr(cfg, 100, 100) == doctest::Approx(0.0));
  CHECK_THROWS_AS(parse_schedule("linear"), ConfigError);
  CHECK(parse_optimizer("sgd") == OptimizerKind::sgd_momentum);
}

TEST_CASE("classification metrics") {
  // Confusion: class 0 -> {0, 0, 1}, class 1 -> {1}, class 2 -> {0}.
  const std::vector<std::size_t> pred{0, 0, 1, 1, 0}, truth{0, 0, 0, 1, 2};
  const Metrics m = classification_metrics(pred, truth, 3);
  CHECK(m.accuracy == doctest::Approx(0.6));
  // precision: 2/3, 1/2, 0 ; recall: 2/3, 1, 0
  CHECK(m.precision == doctest::Approx((2.0 / 3 + 0.5) / 3));
  CHECK(m.recall == doctest::Approx((2.0 / 3 + 1.0) / 3));
  CHECK(m.f1 == doctest::Approx((2.0 / 3 + 2.0 / 3) / 3));

  // Classes absent from the labels are left out of the average.
  const Metrics p = classification_metrics(std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{0, 1}, 5);
  CHECK(p.precision == 1.0);
  CHECK(p.f1 == 1.0);
}

TEST_CASE("metric csv round trip is exact") {
  testing::TempDir dir("csv");
  const std::vector<MetricRow> rows{{0, "train", {0.1, 1.0 / 3.0, 2.0 / 7.0, 1e-300, 0.9999999999999999}},
                                    {1, "test", {2.718281828459045, 0.5, 0.25, 0.125, 0.0}}};
  write_metric_csv(dir.file("c.csv"), rows);
  const auto back = read_metric_csv(dir.file("c.csv"));
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].epoch == rows[i].epoch);
    CHECK(back[i].split == rows[i].split);
    CHECK(back[i].m.loss == rows[i].m.loss);
    CHECK(back[i].m.accuracy == rows[i].m.accuracy);
    CHECK(back[i].m.recall == rows[i].m.recall);
    CHECK(back[i].m.f1 == rows[i].m.f1);
  }
  testing::write_text(dir.file("bad.csv"), "epoch,loss\n");
  CHECK_THROWS_AS(read_metric_csv(dir.file("bad.csv")), FormatError);
}

TEST_CASE("training loop") {
  const Dataset ds = easy_data(129, 2);
  const TrainData set{&ds, {}};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.seed = 4;
  cfg.optimizer.lr = 0.05;

  SUBCASE("zero epochs") {
    Model m(with_norm(mlp_spec(4, 2, {8}), NormKind::bn, 1), 1);
    cfg.epochs = 0;
    CHECK(train(m, set, cfg).rows.empty());
    CHECK_FALSE(m.trained());
  }
  SUBCASE("a trailing batch of one is merged") {
    Model m(with_norm(mlp_spec(4, 2, {8}), NormKind::bn, 1), 1);
    std::vector<std::size_t> sizes;
    train(m, set, cfg, nullptr, [&](std::size_t, Model&, const LossResult& r) { sizes.push_back(r.labels.size()); });
    CHECK(sizes == std::vector<std::size_t>{64, 65, 64, 65, 64, 65});
  }
  SUBCASE("deterministic and improving") {
    Model a(with_norm(mlp_spec(4, 2, {8}), NormKind::bn, 1), 1);
    Model b(with_norm(mlp_spec(4, 2, {8}), NormKind::bn, 1), 1);
    const double before = evaluate(a, set).loss;
    const MetricLog la = train(a, set, cfg, &set);
    const MetricLog lb = train(b, set, cfg, &set);
    REQUIRE(la.rows.size() == 6);
    CHECK(la.rows[1].split == "test");
    for (std::size_t i = 0; i < 6; ++i) CHECK(la.rows[i].m.loss == lb.rows[i].m.loss);
    CHECK(la.rows.back().m.loss < before);
    CHECK(la.epoch_seconds.size() == 3);
  }
  SUBCASE("cn needs contexts") {
    Model m(with_norm(mlp_spec(4, 2, {8}), NormKind::cn, 2), 1);
    CHECK_THROWS_AS(train(m, set, cfg), ConfigError);
    const TrainData with_ids{&ds, ds.true_contexts};
    CHECK(train(m, with_ids, cfg).rows.size() == 3);
  }
}

TEST_CASE("evaluating an untrained model changes nothing") {
  const Dataset ds = easy_data(40, 3);
  Model m(with_norm(mlp_spec(4, 2, {8}), NormKind::bn, 1), 1);
  const auto bufs = m.buffers();
  const Tensor before = *bufs.front().second;
  const Metrics a = evaluate(m, {&ds, {}});
  const Metrics b = evaluate(m, {&ds, {}});
  CHECK(a.loss == b.loss);
  CHECK(*bufs.front().second == before);
  CHECK_FALSE(m.trained());
}

TEST_CASE("divergence is reported with its step") {
  const Dataset ds = easy_data(64, 4);
  Model m(with_norm(mlp_spec(4, 2, {8}), NormKind::none, 1), 1);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.optimizer.lr = 1e6;
  try {
    train(m, {&ds, {}}, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
  }
}
