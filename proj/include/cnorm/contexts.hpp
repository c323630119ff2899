#pragma once

// Context construction: k-means clusters, class -> superclass maps, domain
// tags, or ids shipped with the dataset. Contexts are fixed before training.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnorm/data.hpp"
#include "cnorm/tensor.hpp"

namespace cnorm {

struct KMeansResult {
  Tensor centroids;  ///< [K, D]
  std::vector<std::size_t> ids;
  std::vector<double> distortion;  ///< after each Lloyd iteration
  std::size_t iterations = 0;
};

/// k-means++ seeding then Lloyd iterations until the assignment stops
/// changing or max_iters. A cluster that loses all points is moved to the
/// point farthest from its current centroid.
KMeansResult kmeans_fit(const Tensor& features, std::size_t k, Rng& rng, std::size_t max_iters = 100);

/// lambda_k = |{i : ids[i] = k}| / n. Throws ConfigError for empty contexts.
Tensor context_proportions(std::span<const std::size_t> ids, std::size_t k);

enum class ContextStrategy { kmeans, superclass, domain, dataset };
enum class ContextFeatures { raw, channel_mean };

ContextStrategy parse_strategy(const std::string& s);
std::string to_string(ContextStrategy s);

/// Sidecar file contents. `map` keys are class ids and values 1-based context
/// ids; `domains` holds one tag per sample of the loaded dataset, and
/// `domain_order` (optional) fixes which tag is context 1, 2, ...
struct ContextSidecar {
  std::map<std::size_t, std::size_t> map;
  std::vector<std::string> domains;
  std::vector<std::string> domain_order;
};

ContextSidecar read_sidecar(const std::string& path);

struct ContextSpec {
  ContextStrategy strategy = ContextStrategy::kmeans;
  std::size_t k = 0;  ///< required for kmeans; inferred otherwise
  ContextFeatures features = ContextFeatures::raw;
  std::size_t kmeans_iters = 100;
  std::optional<ContextSidecar> sidecar;
};

struct ContextAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> ids;  ///< 0-based
  Tensor lambdas;                ///< [K]
  ContextStrategy strategy = ContextStrategy::kmeans;
  Tensor centroids;                     ///< kmeans only
  std::vector<std::string> domain_tags; ///< domain only, context order
};

/// Per-sample clustering features: [n, C*L] raw or [n, C] channel means.
Tensor context_features(const Tensor& x, ContextFeatures features);

std::vector<std::size_t> map_superclasses(std::span<const std::size_t> labels,
                                          const std::map<std::size_t, std::size_t>& map);

/// Builds contexts for `ds` (the training split).
ContextAssignment assign_contexts(const Dataset& ds, const ContextSpec& spec, Rng& rng);

/// Context ids for held-out samples under an assignment built on training
/// data: nearest centroid for kmeans, the same map/tags otherwise.
std::vector<std::size_t> assign_heldout(const Dataset& ds, const ContextSpec& spec,
                                        const ContextAssignment& fitted);

}  // namespace cnorm
