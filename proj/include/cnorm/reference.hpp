#pragma once

// Serial, loop-for-loop reference versions of cnorm::kernels. Kept for the
// kernel equivalence tests and the benchmark; not used by the library.

#include <cstddef>
#include <cstdint>
#include <span>

#include "cnorm/tensor.hpp"

namespace cnorm::reference {

std::size_t channel_moments(const Tensor& x, std::span<const std::uint8_t> mask,
                            std::span<double> mean, std::span<double> var);
void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                    Tensor& db);
void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t height,
                     std::size_t width, Tensor& y);
void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t height,
                      std::size_t width, Tensor& dx, Tensor& dw, Tensor& db);
void pairwise_sq_dist(const Tensor& points, const Tensor& centers, Tensor& dist);
void nearest_center(const Tensor& points, const Tensor& centers, std::span<std::size_t> ids);

// Diagonal-GMM posteriors computed directly as lambda_k p(x|k) / sum_l lambda_l p(x|l)
// (no log space). Only valid where the densities do not underflow.
Tensor gmm_posteriors_direct(const Tensor& points, const Tensor& weights, const Tensor& means,
                             const Tensor& vars);

}  // namespace cnorm::reference
