#pragma once

// Data-parallel inner loops shared by the layers. Every kernel here is
// OpenMP-parallel over an axis whose iterations write disjoint outputs and
// reduce serially, so results do not depend on the thread count. Serial
// twins with identical signatures live in cnorm/reference.hpp.

#include <cstddef>
#include <cstdint>
#include <span>

#include "cnorm/tensor.hpp"

namespace cnorm::kernels {

// Per-channel mean and biased variance of x[N, C, L] over selected samples.
// `mask` may be empty (select all). Returns the number of reduced elements.
std::size_t channel_moments(const Tensor& x, std::span<const std::uint8_t> mask,
                            std::span<double> mean, std::span<double> var);

// y[N, O] = x[N, I] * W[O, I]^T + b[O]
void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
// dx = dy * W;  dW = dy^T * x;  db = column sums of dy
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                    Tensor& db);

// 3x3 convolution, stride 1, zero padding 1. x[N, Ci, H*W], w[Co, Ci, 9], b[Co].
void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t height,
                     std::size_t width, Tensor& y);
void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t height,
                      std::size_t width, Tensor& dx, Tensor& dw, Tensor& db);

// Squared Euclidean distance from every row of points[n, D] to every row of
// centers[K, D]; writes dist[n, K].
void pairwise_sq_dist(const Tensor& points, const Tensor& centers, Tensor& dist);

// Index of the nearest center per point (lowest index wins ties).
void nearest_center(const Tensor& points, const Tensor& centers, std::span<std::size_t> ids);

}  // namespace cnorm::kernels
