#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnorm/tensor.hpp"

namespace cnorm {

struct Dataset {
  Tensor x;  ///< [n, C, L]; images are [n, 1, H*W], feature vectors [n, D, 1]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::size_t height = 0, width = 0;  ///< spatial layout of L, zero for vector data
  std::vector<std::size_t> true_contexts;  ///< generator-provided context ids, if any
  std::vector<std::string> domains;        ///< per-sample domain tags, if any

  std::size_t size() const { return labels.size(); }
};

/// Rows `idx` of `ds`, in that order, with all per-sample side data.
Dataset subset(const Dataset& ds, std::span<const std::size_t> idx);

struct Split {
  Dataset train, test;
};

/// Shuffled split; the test part gets round(fraction * n) samples.
Split split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// IDX image/label pair (MNIST layout). Pixels are scaled by 1/255. When
/// subset_n > 0 the first subset_n samples of a seeded shuffle are kept.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t subset_n, std::uint64_t seed);

/// K spherical unit-variance Gaussians in R^dim whose means sit on distinct
/// coordinate axes, `separation` apart pairwise. Labels and true contexts are
/// the component ids; components are balanced.
Dataset gen_synthetic_gmm(std::size_t k_true, std::size_t n, std::size_t dim, double separation,
                          Rng& rng);

/// Numeric CSV, one sample per row: label first, then features. A first line
/// that does not parse as numbers is treated as a header.
Dataset load_csv(const std::string& path);

}  // namespace cnorm
