#include "cnorm/reference.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace cnorm::reference {

std::size_t channel_moments(const Tensor& x, std::span<const std::uint8_t> mask,
                            std::span<double> mean, std::span<double> var) {
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  std::size_t count = 0;
  for (std::size_t ci = 0; ci < c; ++ci) {
    double s = 0.0;
    count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask.empty() || mask[i])
        for (std::size_t j = 0; j < l; ++j, ++count) s += x.at(i, ci, j);
    mean[ci] = count ? s / static_cast<double>(count) : 0.0;
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask.empty() || mask[i])
        for (std::size_t j = 0; j < l; ++j) q += (x.at(i, ci, j) - mean[ci]) * (x.at(i, ci, j) - mean[ci]);
    var[ci] = count ? q / static_cast<double>(count) : 0.0;
  }
  return count;
}

void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += x[i * in + k] * w.at(o, k);
      y[i * out + o] = acc + b[o];
    }
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                    Tensor& db) {
  const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < in; ++k) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += dy[i * out + o] * w.at(o, k);
      dx[i * in + k] = acc;
    }
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t k = 0; k < in; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += dy[i * out + o] * x[i * in + k];
      dw.at(o, k) = acc;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += dy[i * out + o];
    db[o] = acc;
  }
}

namespace {

double padded(const Tensor& x, std::size_t i, std::size_t c, long r, long col, std::size_t h,
              std::size_t w) {
  if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w)) return 0.0;
  return x.at(i, c, static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col));
}

}  // namespace

void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t height,
                     std::size_t width, Tensor& y) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < height; ++r)
        for (std::size_t col = 0; col < width; ++col) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx)
                acc += w.at(o, c, static_cast<std::size_t>(ky * 3 + kx)) *
                       padded(x, i, c, static_cast<long>(r) + ky - 1, static_cast<long>(col) + kx - 1,
                              height, width);
          y.at(i, o, r * width + col) = acc;
        }
}

void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t height,
                      std::size_t width, Tensor& dx, Tensor& dw, Tensor& db) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0);
  dx.fill(0.0);
  dw.fill(0.0);
  db.fill(0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < height; ++r)
        for (std::size_t col = 0; col < width; ++col) {
          const double g = dy.at(i, o, r * width + col);
          db[o] += g;
          for (std::size_t c = 0; c < ci; ++c)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx) {
                const long rr = static_cast<long>(r) + ky - 1;
                const long cc = static_cast<long>(col) + kx - 1;
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(height) || cc >= static_cast<long>(width))
                  continue;
                const std::size_t tap = static_cast<std::size_t>(ky * 3 + kx);
                const std::size_t pos = static_cast<std::size_t>(rr) * width + static_cast<std::size_t>(cc);
                dw.at(o, c, tap) += g * x.at(i, c, pos);
                dx.at(i, c, pos) += g * w.at(o, c, tap);
              }
        }
}

void pairwise_sq_dist(const Tensor& points, const Tensor& centers, Tensor& dist) {
  for (std::size_t i = 0; i < points.dim(0); ++i)
    for (std::size_t j = 0; j < centers.dim(0); ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < centers.dim(1); ++t)
        acc += (points.at(i, t) - centers.at(j, t)) * (points.at(i, t) - centers.at(j, t));
      dist.at(i, j) = acc;
    }
}

void nearest_center(const Tensor& points, const Tensor& centers, std::span<std::size_t> ids) {
  Tensor dist({points.dim(0), centers.dim(0)});
  pairwise_sq_dist(points, centers, dist);
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < centers.dim(0); ++j)
      if (dist.at(i, j) < dist.at(i, arg)) arg = j;
    ids[i] = arg;
  }
}

Tensor gmm_posteriors_direct(const Tensor& points, const Tensor& weights, const Tensor& means,
                             const Tensor& vars) {
  const std::size_t n = points.dim(0), k = means.dim(0), d = means.dim(1);
  Tensor post({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double density = 1.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double v = vars.at(j, t);
        const double e = points.at(i, t) - means.at(j, t);
        density *= std::exp(-0.5 * e * e / v) / std::sqrt(2.0 * std::numbers::pi * v);
      }
      post.at(i, j) = weights[j] * density;
      total += post.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) post.at(i, j) /= total;
  }
  return post;
}

}  // namespace cnorm::reference
