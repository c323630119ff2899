#include "cnorm/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "cnorm/baseline_norms.hpp"
#include "cnorm/context_norm.hpp"
#include "cnorm/error.hpp"

namespace cnorm {
namespace {

Tensor randn(const Shape& shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.normal(mean, stddev);
  return t;
}

double project(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

Tensor random_proportions(std::size_t k, Rng& rng) {
  Tensor lam({k});
  double total = 0.0;
  for (auto& v : lam.values()) total += (v = rng.uniform(0.2, 1.0));
  for (auto& v : lam.values()) v /= total;
  return lam;
}

struct Checker {
  std::string layer;
  std::uint64_t seed;
  double step, tolerance;
  std::vector<GradcheckEntry> out;

  void operator()(const std::string& name, const Tensor& analytic, const Tensor& at,
                  const std::function<double(const Tensor&)>& f) {
    const Tensor numeric = finite_diff_grad(f, at, step);
    out.push_back({layer, name, seed, relative_error(analytic, numeric), tolerance});
  }
};

std::vector<std::size_t> round_robin(std::size_t n, std::size_t k) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i % k;
  return ids;
}

void check_bn(Checker& check, const GradcheckOptions& o, Rng& rng) {
  BnState s = BnState::create(o.c);
  s.eps = o.eps;
  s.gamma = randn({o.c}, rng, 1.0, 0.3);
  s.beta = randn({o.c}, rng, 0.0, 0.3);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  const auto fw = bn_forward_train(x, s);
  const BnGrads g = bn_backward(fw.cache, w);

  check("x", g.dx, x, [&](const Tensor& v) { return project(bn_forward_train(v, s).y, w); });
  check("gamma", g.dgamma, s.gamma, [&](const Tensor& v) {
    BnState t = s;
    t.gamma = v;
    return project(bn_forward_train(x, t).y, w);
  });
  check("beta", g.dbeta, s.beta, [&](const Tensor& v) {
    BnState t = s;
    t.beta = v;
    return project(bn_forward_train(x, t).y, w);
  });
}

void check_ln(Checker& check, const GradcheckOptions& o, Rng& rng) {
  const Tensor gamma = randn({o.c}, rng, 1.0, 0.3), beta = randn({o.c}, rng, 0.0, 0.3);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  const BnGrads g = ln_backward(ln_forward(x, gamma, beta, o.eps).cache, w);

  check("x", g.dx, x, [&](const Tensor& v) { return project(ln_forward(v, gamma, beta, o.eps).y, w); });
  check("gamma", g.dgamma, gamma,
        [&](const Tensor& v) { return project(ln_forward(x, v, beta, o.eps).y, w); });
  check("beta", g.dbeta, beta,
        [&](const Tensor& v) { return project(ln_forward(x, gamma, v, o.eps).y, w); });
}

void check_modenorm(Checker& check, const GradcheckOptions& o, Rng& rng) {
  ModeNormState s = ModeNormState::create(o.k, o.c, rng, 0.5);
  s.eps = o.eps;
  s.gamma = randn({o.c}, rng, 1.0, 0.3);
  s.beta = randn({o.c}, rng, 0.0, 0.3);
  s.gate_bias = randn({o.k}, rng, 0.0, 0.3);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  auto loss = [&](const Tensor& xv, ModeNormState t) {
    return project(modenorm_forward_train(xv, t, false).y, w);
  };
  ModeNormState copy = s;
  const ModeNormGrads g = modenorm_backward(modenorm_forward_train(x, copy, false).cache, w);

  check("x", g.dx, x, [&](const Tensor& v) { return loss(v, s); });
  check("gamma", g.dgamma, s.gamma, [&](const Tensor& v) {
    ModeNormState t = s;
    t.gamma = v;
    return loss(x, t);
  });
  check("beta", g.dbeta, s.beta, [&](const Tensor& v) {
    ModeNormState t = s;
    t.beta = v;
    return loss(x, t);
  });
  check("gate_weight", g.dgate_weight, s.gate_weight, [&](const Tensor& v) {
    ModeNormState t = s;
    t.gate_weight = v;
    return loss(x, t);
  });
  check("gate_bias", g.dgate_bias, s.gate_bias, [&](const Tensor& v) {
    ModeNormState t = s;
    t.gate_bias = v;
    return loss(x, t);
  });
}

void check_mixnorm(Checker& check, const GradcheckOptions& o, Rng& rng) {
  GmmParams gmm{random_proportions(o.k, rng), randn({o.k, o.c}, rng), Tensor({o.k, o.c})};
  for (auto& v : gmm.vars.values()) v = std::exp(rng.normal(0.0, 0.3));
  const Tensor gamma = randn({o.c}, rng, 1.0, 0.3), beta = randn({o.c}, rng, 0.0, 0.3);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  const auto fw = mixnorm_forward(x, gmm, gamma, beta, o.eps);
  const BnGrads g = mixnorm_backward(fw.cache, w);

  // Stop-gradient contract: posteriors and moments are constants for dx.
  check("x", g.dx, x, [&](const Tensor& v) {
    return project(mixnorm_forward_frozen(v, fw.cache.post, gmm.weights, fw.cache.mean, fw.cache.var,
                                          gamma, beta, o.eps)
                       .y,
                   w);
  });
  check("gamma", g.dgamma, gamma,
        [&](const Tensor& v) { return project(mixnorm_forward(x, gmm, v, beta, o.eps).y, w); });
  check("beta", g.dbeta, beta,
        [&](const Tensor& v) { return project(mixnorm_forward(x, gmm, gamma, v, o.eps).y, w); });
}

void check_cn(Checker& check, const GradcheckOptions& o, Rng& rng) {
  CnState s = CnState::create(random_proportions(o.k, rng), o.c);
  s.eps = o.eps;
  s.gamma = randn({o.k, o.c}, rng, 1.0, 0.3);
  s.beta = randn({o.k, o.c}, rng, 0.0, 0.3);
  const auto ids = round_robin(o.n, o.k);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  auto loss = [&](const Tensor& xv, CnState t) { return project(cn_forward_train(xv, ids, t, false).y, w); };
  CnState copy = s;
  const CnGrads g = cn_backward(cn_forward_train(x, ids, copy, false).cache, w);

  check("x", g.dx, x, [&](const Tensor& v) { return loss(v, s); });
  check("gamma", g.dgamma, s.gamma, [&](const Tensor& v) {
    CnState t = s;
    t.gamma = v;
    return loss(x, t);
  });
  check("beta", g.dbeta, s.beta, [&](const Tensor& v) {
    CnState t = s;
    t.beta = v;
    return loss(x, t);
  });
}

void check_cnx(Checker& check, const GradcheckOptions& o, Rng& rng) {
  CnxParams p = CnxParams::create(random_proportions(o.k, rng), o.c, rng);
  p.eps = o.eps;
  p.gamma = randn({o.k, o.c}, rng, 1.0, 0.3);
  p.beta = randn({o.k, o.c}, rng, 0.0, 0.3);
  p.log_var = randn({o.k, o.c}, rng, 0.0, 0.3);
  const auto ids = round_robin(o.n, o.k);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  const CnxGrads g = cnx_backward(cnx_forward(x, ids, p).cache, w);
  auto with = [&](Tensor CnxParams::*field) {
    return [&, field](const Tensor& v) {
      CnxParams t = p;
      t.*field = v;
      return project(cnx_forward(x, ids, t).y, w);
    };
  };

  check("x", g.dx, x, [&](const Tensor& v) { return project(cnx_forward(v, ids, p).y, w); });
  check("gamma", g.dgamma, p.gamma, with(&CnxParams::gamma));
  check("beta", g.dbeta, p.beta, with(&CnxParams::beta));
  check("mu", g.dmu, p.mu, with(&CnxParams::mu));
  check("log_var", g.dlog_var, p.log_var, with(&CnxParams::log_var));
}

void check_acn(Checker& check, const GradcheckOptions& o, Rng& rng) {
  AcnParams p = acn_init(o.k, o.c, rng);
  p.eps = o.eps;
  p.gamma = randn({o.k, o.c}, rng, 1.0, 0.3);
  p.beta = randn({o.k, o.c}, rng, 0.0, 0.3);
  p.logit_lambda = randn({o.k}, rng, 0.0, 0.5);
  p.log_var = randn({o.k, o.c}, rng, 0.0, 0.3);
  const Tensor x = randn({o.n, o.c, o.l}, rng);
  const Tensor w = randn(x.shape(), rng);
  const AcnGrads g = acn_backward(acn_forward(x, p).cache, w);
  auto with = [&](Tensor AcnParams::*field) {
    return [&, field](const Tensor& v) {
      AcnParams t = p;
      t.*field = v;
      return project(acn_forward(x, t).y, w);
    };
  };

  check("x", g.dx, x, [&](const Tensor& v) { return project(acn_forward(v, p).y, w); });
  check("gamma", g.dgamma, p.gamma, with(&AcnParams::gamma));
  check("beta", g.dbeta, p.beta, with(&AcnParams::beta));
  check("logit_lambda", g.dlogit_lambda, p.logit_lambda, with(&AcnParams::logit_lambda));
  check("mu", g.dmu, p.mu, with(&AcnParams::mu));
  check("log_var", g.dlog_var, p.log_var, with(&AcnParams::log_var));
}

}  // namespace

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> layers{"bn", "ln", "modenorm", "mixnorm-frozen", "cn", "cnx", "acn"};
  return layers;
}

std::vector<GradcheckEntry> gradcheck_layer(const std::string& layer, std::uint64_t seed,
                                            const GradcheckOptions& opts) {
  Rng rng(seed, 0x6772);
  Checker check{layer, seed, opts.step, layer == "acn" ? opts.acn_tolerance : opts.tolerance, {}};
  if (layer == "bn") check_bn(check, opts, rng);
  else if (layer == "ln") check_ln(check, opts, rng);
  else if (layer == "modenorm") check_modenorm(check, opts, rng);
  else if (layer == "mixnorm-frozen") check_mixnorm(check, opts, rng);
  else if (layer == "cn") check_cn(check, opts, rng);
  else if (layer == "cnx") check_cnx(check, opts, rng);
  else if (layer == "acn") check_acn(check, opts, rng);
  else throw ConfigError("gradcheck: unknown layer '" + layer + "'");
  return std::move(check.out);
}

}  // namespace cnorm
