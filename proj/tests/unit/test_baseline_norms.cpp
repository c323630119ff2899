#include <doctest.h>

#include <cmath>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/error.hpp"
#include "helpers.hpp"

using namespace cnorm;

namespace {

// Per-channel mean and variance of xhat over (n, l).
void channel_stats(const Tensor& t, std::size_t ci, double& mean, double& var) {
  const std::size_t n = t.dim(0), l = t.dim(2);
  double s = 0.0, q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) s += t.at(i, ci, j);
  mean = s / static_cast<double>(n * l);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) q += (t.at(i, ci, j) - mean) * (t.at(i, ci, j) - mean);
  var = q / static_cast<double>(n * l);
}

}  // namespace

TEST_CASE("batch norm") {
  Rng rng(31);
  const Tensor x = testing::randn({16, 3, 5}, rng, 4.0, 3.0);
  BnState st = BnState::create(3);
  const BnForward f = bn_forward_train(x, st);

  SUBCASE("pre-affine output is standardised") {
    for (std::size_t c = 0; c < 3; ++c) {
      double m, v;
      channel_stats(f.cache.xhat, c, m, v);
      CHECK(std::abs(m) < 1e-12);
      // Biased variance with eps in the denominator: var / (var + eps).
      CHECK(std::abs(v - f.cache.var[c] / (f.cache.var[c] + st.eps)) < 1e-12);
    }
  }
  SUBCASE("two-element closed form") {
    const Tensor y = bn_forward_train(Tensor({2, 1, 1}, {1.0, 3.0}), BnState::create(1)).y;
    const double h = 1.0 / std::sqrt(1.0 + kDefaultEps);
    CHECK(y[0] == doctest::Approx(-h).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(h).epsilon(1e-15));
  }
  SUBCASE("affine is applied after standardisation") {
    BnState s2 = BnState::create(3);
    s2.gamma = Tensor({3}, {2.0, -1.0, 0.5});
    s2.beta = Tensor({3}, {1.0, 0.0, -3.0});
    const Tensor y = bn_forward_train(x, s2).y;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t c = (i / 5) % 3;
      CHECK(std::abs(y[i] - (s2.gamma[c] * f.cache.xhat[i] + s2.beta[c])) < 1e-14);
    }
  }
  SUBCASE("running statistics and eval") {
    CHECK_THROWS_AS(bn_forward_eval(x, st), StateError);
    bn_update_running(st, f.cache.mean, f.cache.var);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(st.running_mean[c] == doctest::Approx(0.1 * f.cache.mean[c]));
      CHECK(st.running_var[c] == doctest::Approx(0.9 + 0.1 * f.cache.var[c]));
    }
    // With running stats equal to the batch stats, eval reproduces train.
    st.running_mean = f.cache.mean;
    st.running_var = f.cache.var;
    CHECK(max_abs_diff(bn_forward_eval(x, st), f.y) < 1e-12);
  }
  SUBCASE("backward sums") {
    const Tensor dy = testing::randn(x.shape(), rng);
    const BnGrads g = bn_backward(f.cache, dy);
    // A per-channel shift of x does not change the output, so dx sums to zero
    // per channel. Scaling x about its mean only moves the output through
    // eps, which leaves <dx, xhat> = inv_std * dgamma * eps / (var + eps).
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0, sh = 0.0;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          s += g.dx.at(i, c, j);
          sh += g.dx.at(i, c, j) * f.cache.xhat.at(i, c, j);
        }
      CHECK(std::abs(s) < 1e-12);
      const double expect = f.cache.inv_std[c] * g.dgamma[c] * st.eps / (f.cache.var[c] + st.eps);
      CHECK(std::abs(sh - expect) < 1e-12);
    }
  }
  SUBCASE("degenerate batch") {
    CHECK_THROWS_AS(bn_forward_train(Tensor({1, 2, 1}), BnState::create(2)), DegenerateError);
    CHECK_THROWS_AS(bn_forward_train(Tensor({4, 2, 1}), BnState::create(3)), ShapeError);
  }
}

TEST_CASE("layer norm standardises each sample") {
  Rng rng(32);
  const Tensor x = testing::randn({5, 4, 3}, rng, -2.0, 5.0);
  const LnForward f = ln_forward(x, Tensor({4}, 1.0), Tensor({4}, 0.0), kDefaultEps);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0, q = 0.0;
    for (std::size_t j = 0; j < 12; ++j) s += f.cache.xhat[i * 12 + j];
    for (std::size_t j = 0; j < 12; ++j) q += f.cache.xhat[i * 12 + j] * f.cache.xhat[i * 12 + j];
    CHECK(std::abs(s / 12) < 1e-12);
    CHECK(std::abs(q / 12 - 1.0) < 1e-4);
  }
  // Independent of the rest of the batch.
  const LnForward one = ln_forward(testing::subset_rows(x, 2), Tensor({4}, 1.0), Tensor({4}, 0.0), kDefaultEps);
  for (std::size_t j = 0; j < 12; ++j) CHECK(one.y[j] == f.y[2 * 12 + j]);
}

TEST_CASE("mode norm") {
  Rng rng(33);
  const Tensor x = testing::randn({12, 3, 4}, rng, 1.0, 2.0);

  SUBCASE("one mode is batch norm") {
    ModeNormState m = ModeNormState::create(1, 3, rng);
    const BnForward b = bn_forward_train(x, BnState::create(3));
    const ModeNormForward f = modenorm_forward_train(x, m);
    CHECK(max_abs_diff(f.y, b.y) < 1e-10);
    for (double g : f.cache.gates.values()) CHECK(g == 1.0);
  }
  SUBCASE("gates are row-stochastic") {
    ModeNormState m = ModeNormState::create(3, 3, rng, 2.0);
    const Tensor g = modenorm_gates(x, m);
    for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(g.at(i, 0) + g.at(i, 1) + g.at(i, 2) - 1.0) < 1e-15);
  }
  SUBCASE("eval needs running stats") {
    ModeNormState m = ModeNormState::create(2, 3, rng);
    CHECK_THROWS_AS(modenorm_forward_eval(x, m), StateError);
    const ModeNormForward f = modenorm_forward_train(x, m);
    m.running_mean = f.cache.mean;
    m.running_var = f.cache.var;
    CHECK(max_abs_diff(modenorm_forward_eval(x, m), f.y) < 1e-12);
  }
}

TEST_CASE("mixture norm") {
  Rng rng(34);
  const Tensor x = testing::randn({10, 2, 3}, rng);

  SUBCASE("one component is batch norm") {
    const GmmParams g{Tensor({1}, 1.0), Tensor({1, 2}), Tensor({1, 2}, 1.0)};
    const MixNormForward f = mixnorm_forward(x, g, Tensor({2}, 1.0), Tensor({2}, 0.0), kDefaultEps);
    CHECK(max_abs_diff(f.y, bn_forward_train(x, BnState::create(2)).y) < 1e-10);
  }
  SUBCASE("hard posteriors give per-group standardisation") {
    // Samples 0-4 sit near -20, 5-9 near +20 in both channels.
    Tensor y = x;
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 3; ++t) y.at(i, c, t) += i < 5 ? -20.0 : 20.0;
    const GmmParams g{Tensor({2}, 0.5), Tensor({2, 2}, {-20, -20, 20, 20}), Tensor({2, 2}, 1.0)};
    const MixNormForward f = mixnorm_forward(y, g, Tensor({2}, 1.0), Tensor({2}, 0.0), kDefaultEps);
    for (std::size_t half = 0; half < 2; ++half) {
      for (std::size_t c = 0; c < 2; ++c) {
        double s = 0.0, q = 0.0;
        for (std::size_t i = half * 5; i < half * 5 + 5; ++i)
          for (std::size_t t = 0; t < 3; ++t) s += f.cache.xhat.at(i, c, t);
        for (std::size_t i = half * 5; i < half * 5 + 5; ++i)
          for (std::size_t t = 0; t < 3; ++t) q += f.cache.xhat.at(i, c, t) * f.cache.xhat.at(i, c, t);
        // Standardised within the group, then divided by sqrt(0.5).
        CHECK(std::abs(s) < 1e-9);
        CHECK(std::abs(q / 15 - 2.0) < 1e-3);
      }
    }
  }
  SUBCASE("zero mixture weight is rejected") {
    const GmmParams g{Tensor({2}, {1.0, 0.0}), Tensor({2, 2}), Tensor({2, 2}, 1.0)};
    CHECK_THROWS_AS(mixnorm_forward(x, g, Tensor({2}, 1.0), Tensor({2}, 0.0), kDefaultEps), MixtureError);
  }
  SUBCASE("positions round trip") {
    CHECK(from_positions(positions_matrix(x), x.shape()) == x);
  }
  SUBCASE("eval before fitting") {
    CHECK_THROWS_AS(mixnorm_forward_eval(x, MixNormState::create(2, 2)), StateError);
  }
}
