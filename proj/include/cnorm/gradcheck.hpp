#pragma once

// Finite-difference certification of every layer's backward pass on small
// random problems. Shared by the tests, the acceptance gate and the CLI.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cnorm {

struct GradcheckOptions {
  std::size_t n = 4, c = 3, l = 2, k = 2;
  double eps = 1e-3;        ///< normaliser epsilon
  double step = 1e-5;       ///< central-difference step
  double tolerance = 1e-5;  ///< relative error bound
  double acn_tolerance = 1e-4;
};

struct GradcheckEntry {
  std::string layer;
  std::string tensor;  ///< "x", "gamma", ...
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return rel_error <= tolerance; }
};

/// bn, ln, modenorm, mixnorm-frozen, cn, cnx, acn
const std::vector<std::string>& gradcheck_layers();

/// One entry per gradient the layer produces. The loss is a fixed random
/// projection sum(w * y) of the layer output.
std::vector<GradcheckEntry> gradcheck_layer(const std::string& layer, std::uint64_t seed,
                                            const GradcheckOptions& opts = {});

}  // namespace cnorm
