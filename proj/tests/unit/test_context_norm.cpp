#include <doctest.h>

#include <cmath>
#include <vector>

#include "cnorm/context_norm.hpp"
#include "cnorm/error.hpp"
#include "cnorm/gradcheck.hpp"
#include "helpers.hpp"

using namespace cnorm;

namespace {

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t per = x.size() / x.dim(0);
  std::vector<double> v;
  for (auto r : rows) v.insert(v.end(), x.data() + r * per, x.data() + (r + 1) * per);
  return Tensor({rows.size(), x.dim(1), x.dim(2)}, std::move(v));
}

}  // namespace

TEST_CASE("cn with one context is batch norm") {
  Rng rng(41);
  const Tensor x = testing::randn({10, 3, 4}, rng, 2.0, 3.0);
  const std::vector<std::size_t> ids(10, 0);
  CnState cn = CnState::create(Tensor({1}, 1.0), 3);
  BnState bn = BnState::create(3);
  const CnForward f = cn_forward_train(x, ids, cn);
  const BnForward b = bn_forward_train(x, bn);
  CHECK(max_abs_diff(f.y, b.y) < 1e-10);

  const Tensor dy = testing::randn(x.shape(), rng);
  const CnGrads gc = cn_backward(f.cache, dy);
  const BnGrads gb = bn_backward(b.cache, dy);
  CHECK(max_abs_diff(gc.dx, gb.dx) < 1e-10);
  CHECK(max_abs_diff(gc.dgamma.reshaped({3}), gb.dgamma) < 1e-10);

  bn_update_running(bn, b.cache.mean, b.cache.var);
  CHECK(max_abs_diff(cn_forward_eval(x, ids, cn), bn_forward_eval(x, bn)) < 1e-10);
}

TEST_CASE("cn is batch norm per context, scaled by 1/sqrt(lambda)") {
  Rng rng(42);
  const Tensor x = testing::randn({9, 2, 3}, rng, 0.0, 2.0);
  const std::vector<std::size_t> ids{0, 1, 1, 0, 2, 1, 2, 0, 2};
  const Tensor lambdas({3}, {0.2, 0.3, 0.5});
  CnState cn = CnState::create(lambdas, 2);
  const CnForward f = cn_forward_train(x, ids, cn);

  for (std::size_t ctx = 0; ctx < 3; ++ctx) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 9; ++i)
      if (ids[i] == ctx) rows.push_back(i);
    const Tensor b = bn_forward_train(rows_of(x, rows), BnState::create(2)).y;
    const Tensor got = rows_of(f.y, rows);
    for (std::size_t e = 0; e < b.size(); ++e) CHECK(std::abs(got[e] - b[e] / std::sqrt(lambdas[ctx])) < 1e-12);
  }
}

TEST_CASE("cn is equivariant under sample permutation") {
  Rng rng(43);
  const Tensor x = testing::randn({8, 2, 2}, rng);
  const std::vector<std::size_t> ids{0, 1, 0, 1, 1, 0, 0, 1};
  const std::vector<std::size_t> perm{3, 0, 7, 5, 1, 6, 2, 4};
  std::vector<std::size_t> pids;
  for (auto p : perm) pids.push_back(ids[p]);
  CnState a = CnState::create(Tensor({2}, 0.5), 2), b = a;
  const Tensor ya = cn_forward_train(x, ids, a).y;
  const Tensor yb = cn_forward_train(rows_of(x, perm), pids, b).y;
  CHECK(max_abs_diff(rows_of(ya, perm), yb) < 1e-13);
  CHECK(max_abs_diff(a.running_mean, b.running_mean) < 1e-15);
}

TEST_CASE("cn edge cases") {
  Rng rng(44);
  const Tensor x = testing::randn({5, 2, 1}, rng);
  CnState st = CnState::create(Tensor({2}, 0.5), 2);

  SUBCASE("singleton context falls back to running stats and is not updated") {
    const std::vector<std::size_t> ids{0, 0, 0, 0, 1};
    st.running_mean.at(1, 0) = 0.25;
    st.running_var.at(1, 0) = 4.0;
    const CnForward f = cn_forward_train(x, ids, st);
    CHECK_FALSE(f.cache.batch_stats[1]);
    CHECK_FALSE(st.initialized[1]);
    CHECK(st.initialized[0]);
    const double want = (x.at(4, 0, 0) - 0.25) / (std::sqrt(0.5) * std::sqrt(4.0 + st.eps));
    CHECK(std::abs(f.y.at(4, 0, 0) - want) < 1e-14);
    // Gradient through a fallback context is the plain affine scale.
    const CnGrads g = cn_backward(f.cache, Tensor(x.shape(), 1.0));
    CHECK(std::abs(g.dx.at(4, 0, 0) - 1.0 / (std::sqrt(0.5) * std::sqrt(4.0 + st.eps))) < 1e-14);
  }
  SUBCASE("context absent from the batch keeps its state") {
    const std::vector<std::size_t> ids(5, 0);
    const CnState before = st;
    cn_forward_train(x, ids, st);
    CHECK(st.running_mean.row(1)[0] == before.running_mean.row(1)[0]);
    CHECK_FALSE(st.initialized[1]);
    CHECK_THROWS_AS(cn_forward_eval(x, std::vector<std::size_t>(5, 1), st), StateError);
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(cn_forward_train(x, std::vector<std::size_t>{0, 0, 0, 0, 2}, st), ConfigError);
    CHECK_THROWS_AS(cn_forward_train(x, std::vector<std::size_t>{0, 0}, st), ShapeError);
    CHECK_THROWS_AS(CnState::create(Tensor({2}, {0.7, 0.7}), 2), ConfigError);
    CHECK_THROWS_AS(CnState::create(Tensor({2}, {1.0, 0.0}), 2), ConfigError);
  }
}

TEST_CASE("cn-x at the batch moments is cn") {
  Rng rng(45);
  const Tensor x = testing::randn({12, 3, 2}, rng, 1.0, 2.0);
  const std::vector<std::size_t> ids{0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 0};
  const Tensor lambdas({2}, {0.4, 0.6});
  CnState cn = CnState::create(lambdas, 3);
  const CnForward f = cn_forward_train(x, ids, cn);

  CnxParams p = CnxParams::create(lambdas, 3, rng);
  p.mu = f.cache.mean;
  for (std::size_t e = 0; e < p.log_var.size(); ++e) p.log_var[e] = std::log(f.cache.var[e]);
  const CnxForward g = cnx_forward(x, ids, p);
  CHECK(max_abs_diff(g.y, f.y) < 1e-12);

  // With unit dy the log-variance gradient is proportional to sum(x - mu) per
  // context, which is zero at the batch mean.
  const CnxGrads gr = cnx_backward(g.cache, Tensor(x.shape(), 1.0));
  for (double v : gr.dlog_var.values()) CHECK(std::abs(v) < 1e-10);
}

TEST_CASE("simplex_softmax") {
  Rng rng(46);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(9);
    Tensor z({k});
    for (auto& v : z.values()) v = rng.normal(0.0, 1.0 + 5.0 * (trial % 4));
    const Tensor p = simplex_softmax(z);
    double s = 0.0;
    for (double v : p.values()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == 1.0);
  }
  const Tensor p = simplex_softmax(Tensor({3}, {0.0, std::log(2.0), std::log(5.0)}));
  CHECK(p[0] == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("acn") {
  Rng rng(47);

  SUBCASE("one context is a learned-moment normaliser") {
    AcnParams p = acn_init(1, 2, rng);
    p.log_var = Tensor({1, 2}, {std::log(2.0), std::log(0.5)});
    p.gamma = Tensor({1, 2}, {1.5, -1.0});
    p.beta = Tensor({1, 2}, {0.1, 0.2});
    const Tensor x = testing::randn({3, 2, 2}, rng);
    const AcnForward f = acn_forward(x, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 2; ++t) {
          const double v = std::exp(p.log_var.at(0, c));
          const double want = p.gamma.at(0, c) * (x.at(i, c, t) - p.mu.at(0, c)) / std::sqrt(v + p.eps) + p.beta.at(0, c);
          CHECK(std::abs(f.y.at(i, c, t) - want) < 1e-13);
        }
  }
  SUBCASE("separated components act as hard contexts") {
    AcnParams p = acn_init(2, 1, rng);
    p.mu = Tensor({2, 1}, {-30.0, 30.0});
    p.gamma = Tensor({2, 1}, {1.0, 3.0});
    const Tensor x({2, 1, 1}, {-29.0, 31.0});
    const AcnForward f = acn_forward(x, p);
    const double s = 1.0 / (std::sqrt(0.5) * std::sqrt(1.0 + p.eps));
    CHECK(f.y[0] == doctest::Approx(s).epsilon(1e-12));
    CHECK(f.y[1] == doctest::Approx(3.0 * s).epsilon(1e-12));
  }
  SUBCASE("posterior rows sum to one, even far from every mean") {
    AcnParams p = acn_init(4, 3, rng);
    for (auto& v : p.logit_lambda.values()) v = rng.normal();
    Tensor x = testing::randn({6, 3, 2}, rng);
    for (std::size_t t = 0; t < 3; ++t) x.at(5, t, 1) = 50.0;
    const AcnForward f = acn_forward(x, p);
    for (std::size_t r = 0; r < 12; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += f.cache.post.at(r, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    for (std::size_t j = 0; j < 4; ++j) CHECK(f.cache.lambdas[j] == p.lambdas()[j]);
  }
}

TEST_CASE("gradients match central differences") {
  GradcheckOptions opts;
  for (const auto& layer : gradcheck_layers()) {
    CAPTURE(layer);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto entries = gradcheck_layer(layer, seed, opts);
      CHECK_FALSE(entries.empty());
      for (const auto& e : entries) {
        CAPTURE(e.tensor);
        CHECK(e.rel_error <= e.tolerance);
      }
    }
  }
  CHECK_THROWS(gradcheck_layer("nope", 1));
}
