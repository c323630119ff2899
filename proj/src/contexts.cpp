#include "cnorm/contexts.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "cnorm/error.hpp"
#include "cnorm/gmm.hpp"
#include "cnorm/kernels.hpp"

namespace cnorm {
namespace {

double distortion(const Tensor& x, const Tensor& centers, const std::vector<std::size_t>& ids) {
  const std::size_t d = x.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t t = 0; t < d; ++t) {
      const double e = x.at(i, t) - centers.at(ids[i], t);
      s += e * e;
    }
  return s;
}

std::vector<std::size_t> domain_ids(const std::vector<std::string>& tags, const std::vector<std::string>& order) {
  std::vector<std::size_t> ids;
  ids.reserve(tags.size());
  for (const auto& t : tags) {
    auto it = std::find(order.begin(), order.end(), t);
    if (it == order.end()) throw ConfigError("unknown domain tag '" + t + "'");
    ids.push_back(static_cast<std::size_t>(it - order.begin()));
  }
  return ids;
}

std::vector<std::string> first_appearance(const std::vector<std::string>& tags) {
  std::vector<std::string> order;
  for (const auto& t : tags)
    if (std::find(order.begin(), order.end(), t) == order.end()) order.push_back(t);
  return order;
}

const ContextSidecar& need_sidecar(const ContextSpec& spec) {
  if (!spec.sidecar) throw ConfigError("context strategy '" + to_string(spec.strategy) + "' needs a sidecar file");
  return *spec.sidecar;
}

}  // namespace

KMeansResult kmeans_fit(const Tensor& x, std::size_t k, Rng& rng, std::size_t max_iters) {
  require_rank(x, 2, "kmeans_fit");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (k == 0) throw ConfigError("kmeans_fit: K must be >= 1");
  if (n < k) throw DegenerateError("kmeans_fit: " + std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");

  KMeansResult r{kmeanspp_seed(x, k, rng), std::vector<std::size_t>(n, 0), {}, 0};
  kernels::nearest_center(x, r.centroids, r.ids);

  for (std::size_t it = 0; it < max_iters; ++it) {
    Tensor sums({k, d});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.ids[i]];
      for (std::size_t t = 0; t < d; ++t) sums.at(r.ids[i], t) += x.at(i, t);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) {
        // Move the empty cluster onto the worst-served point.
        std::size_t far = 0;
        double worst = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (count[r.ids[i]] <= 1) continue;
          double q = 0.0;
          for (std::size_t t = 0; t < d; ++t) {
            const double e = x.at(i, t) - r.centroids.at(r.ids[i], t);
            q += e * e;
          }
          if (q > worst) worst = q, far = i;
        }
        --count[r.ids[far]];
        for (std::size_t t = 0; t < d; ++t) sums.at(r.ids[far], t) -= x.at(far, t);
        r.ids[far] = j;
        count[j] = 1;
        for (std::size_t t = 0; t < d; ++t) sums.at(j, t) = x.at(far, t);
      }
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t t = 0; t < d; ++t) r.centroids.at(j, t) = sums.at(j, t) / static_cast<double>(count[j]);

    std::vector<std::size_t> next(n);
    kernels::nearest_center(x, r.centroids, next);
    r.iterations = it + 1;
    const bool fixed = next == r.ids;
    r.ids = std::move(next);
    r.distortion.push_back(distortion(x, r.centroids, r.ids));
    if (fixed) break;
  }
  return r;
}

Tensor context_proportions(std::span<const std::size_t> ids, std::size_t k) {
  if (ids.empty()) throw ConfigError("context_proportions: no samples");
  std::vector<std::size_t> count(k, 0);
  for (auto id : ids) {
    if (id >= k) throw ConfigError("context id " + std::to_string(id + 1) + " exceeds K=" + std::to_string(k));
    ++count[id];
  }
  Tensor lam({k});
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0) throw ConfigError("context " + std::to_string(j + 1) + " has no samples");
    lam[j] = static_cast<double>(count[j]) / static_cast<double>(ids.size());
  }
  return lam;
}

ContextStrategy parse_strategy(const std::string& s) {
  if (s == "kmeans") return ContextStrategy::kmeans;
  if (s == "superclass") return ContextStrategy::superclass;
  if (s == "domain") return ContextStrategy::domain;
  if (s == "dataset" || s == "true") return ContextStrategy::dataset;
  throw ConfigError("unknown context strategy '" + s + "'");
}

std::string to_string(ContextStrategy s) {
  switch (s) {
    case ContextStrategy::kmeans: return "kmeans";
    case ContextStrategy::superclass: return "superclass";
    case ContextStrategy::domain: return "domain";
    case ContextStrategy::dataset: return "dataset";
  }
  return "?";
}

ContextSidecar read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open context sidecar '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  ContextSidecar s;
  if (j.contains("map")) {
    for (const auto& [cls, ctx] : j["map"].items()) {
      const long c = std::stol(cls);
      const long v = ctx.get<long>();
      if (c < 0 || v < 1) throw ConfigError(path + ": class ids must be >= 0 and context ids >= 1");
      s.map[static_cast<std::size_t>(c)] = static_cast<std::size_t>(v);
    }
  }
  if (j.contains("domains")) s.domains = j["domains"].get<std::vector<std::string>>();
  if (j.contains("order")) s.domain_order = j["order"].get<std::vector<std::string>>();
  if (s.map.empty() && s.domains.empty()) throw ConfigError(path + ": sidecar has neither \"map\" nor \"domains\"");
  return s;
}

Tensor context_features(const Tensor& x, ContextFeatures features) {
  require_rank(x, 3, "context_features");
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  if (features == ContextFeatures::raw) return x.reshaped({n, c * l});
  Tensor f({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (std::size_t t = 0; t < l; ++t) s += x.at(i, ci, t);
      f.at(i, ci) = s / static_cast<double>(l);
    }
  return f;
}

std::vector<std::size_t> map_superclasses(std::span<const std::size_t> labels,
                                          const std::map<std::size_t, std::size_t>& map) {
  std::vector<std::size_t> ids;
  ids.reserve(labels.size());
  for (auto y : labels) {
    auto it = map.find(y);
    if (it == map.end()) throw ConfigError("class " + std::to_string(y) + " has no superclass in the context map");
    ids.push_back(it->second - 1);
  }
  return ids;
}

ContextAssignment assign_contexts(const Dataset& ds, const ContextSpec& spec, Rng& rng) {
  ContextAssignment a;
  a.strategy = spec.strategy;
  switch (spec.strategy) {
    case ContextStrategy::kmeans: {
      if (spec.k == 0) throw ConfigError("kmeans contexts need K >= 1");
      KMeansResult km = kmeans_fit(context_features(ds.x, spec.features), spec.k, rng, spec.kmeans_iters);
      a.k = spec.k;
      a.ids = std::move(km.ids);
      a.centroids = std::move(km.centroids);
      break;
    }
    case ContextStrategy::superclass: {
      const auto& sc = need_sidecar(spec);
      a.ids = map_superclasses(ds.labels, sc.map);
      for (const auto& [cls, ctx] : sc.map) a.k = std::max(a.k, ctx);
      break;
    }
    case ContextStrategy::domain: {
      const auto& sc = need_sidecar(spec);
      const auto& tags = ds.domains.empty() ? sc.domains : ds.domains;
      if (tags.size() != ds.size())
        throw ConfigError("domain tags: " + std::to_string(tags.size()) + " tags for " + std::to_string(ds.size()) + " samples");
      a.domain_tags = sc.domain_order.empty() ? first_appearance(tags) : sc.domain_order;
      a.ids = domain_ids(tags, a.domain_tags);
      a.k = a.domain_tags.size();
      break;
    }
    case ContextStrategy::dataset: {
      if (ds.true_contexts.empty()) throw ConfigError("dataset provides no contexts");
      a.ids = ds.true_contexts;
      for (auto id : a.ids) a.k = std::max(a.k, id + 1);
      break;
    }
  }
  if (spec.k != 0 && spec.k != a.k)
    throw ConfigError("context K=" + std::to_string(spec.k) + " but the " + to_string(spec.strategy) +
                      " strategy yields K=" + std::to_string(a.k));
  a.lambdas = context_proportions(a.ids, a.k);
  return a;
}

std::vector<std::size_t> assign_heldout(const Dataset& ds, const ContextSpec& spec, const ContextAssignment& fitted) {
  switch (spec.strategy) {
    case ContextStrategy::kmeans: {
      std::vector<std::size_t> ids(ds.size());
      kernels::nearest_center(context_features(ds.x, spec.features), fitted.centroids, ids);
      return ids;
    }
    case ContextStrategy::superclass:
      return map_superclasses(ds.labels, need_sidecar(spec).map);
    case ContextStrategy::domain:
      return domain_ids(ds.domains, fitted.domain_tags);
    case ContextStrategy::dataset:
      if (ds.true_contexts.size() != ds.size()) throw ConfigError("held-out data has no contexts");
      return ds.true_contexts;
  }
  return {};
}

}  // namespace cnorm
