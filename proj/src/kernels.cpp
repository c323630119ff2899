#include "cnorm/kernels.hpp"

#include <algorithm>
#include <limits>

#include "cnorm/error.hpp"

namespace cnorm::kernels {
namespace {

using Index = std::ptrdiff_t;

std::size_t features(const Tensor& x) { return x.size() / x.dim(0); }

}  // namespace

std::size_t channel_moments(const Tensor& x, std::span<const std::uint8_t> mask,
                            std::span<double> mean, std::span<double> var) {
  const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
  std::size_t selected = 0;
  for (std::size_t i = 0; i < n; ++i) selected += mask.empty() || mask[i] ? 1 : 0;
  const std::size_t count = selected * l;
  if (count == 0) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    return 0;
  }
  const double inv = 1.0 / static_cast<double>(count);
  const double* px = x.data();

#pragma omp parallel for schedule(static)
  for (Index ci = 0; ci < static_cast<Index>(c); ++ci) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const double* row = px + (i * c + ci) * l;
      for (std::size_t j = 0; j < l; ++j) s += row[j];
    }
    const double mu = s * inv;
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const double* row = px + (i * c + ci) * l;
      for (std::size_t j = 0; j < l; ++j) {
        const double d = row[j] - mu;
        q += d * d;
      }
    }
    mean[ci] = mu;
    var[ci] = q * inv;
  }
  return count;
}

void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
  const std::size_t n = x.dim(0), in = features(x), out = w.dim(0);
  if (w.dim(1) != in) throw ShapeError("dense_forward: weight/input mismatch");
  const double* px = x.data();
  const double* pw = w.data();
  double* py = y.data();

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* xi = px + i * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = pw + o * in;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
      py[i * out + o] = acc + b[o];
    }
  }
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx, Tensor& dw,
                    Tensor& db) {
  const std::size_t n = x.dim(0), in = features(x), out = w.dim(0);
  const double* px = x.data();
  const double* pw = w.data();
  const double* pdy = dy.data();
  double* pdx = dx.data();
  double* pdw = dw.data();

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double* dxi = pdx + i * in;
    std::fill(dxi, dxi + in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = pdy[i * out + o];
      const double* wo = pw + o * in;
      for (std::size_t k = 0; k < in; ++k) dxi[k] += g * wo[k];
    }
  }

#pragma omp parallel for schedule(static)
  for (Index o = 0; o < static_cast<Index>(out); ++o) {
    double* dwo = pdw + o * in;
    std::fill(dwo, dwo + in, 0.0);
    double bias = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = pdy[i * out + o];
      bias += g;
      const double* xi = px + i * in;
      for (std::size_t k = 0; k < in; ++k) dwo[k] += g * xi[k];
    }
    db[o] = bias;
  }
}

namespace {

// Valid output range [lo, hi) along one axis for tap offset d in {-1, 0, 1}.
inline std::size_t tap_lo(int d) { return d < 0 ? 1 : 0; }
inline std::size_t tap_hi(int d, std::size_t extent) { return d > 0 ? extent - 1 : extent; }

}  // namespace

void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t height,
                     std::size_t width, Tensor& y) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0), plane = height * width;
  const double* px = x.data();
  const double* pw = w.data();
  double* py = y.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (Index o = 0; o < static_cast<Index>(co); ++o) {
      double* out = py + (i * co + o) * plane;
      std::fill(out, out + plane, b[o]);
      for (std::size_t c = 0; c < ci; ++c) {
        const double* in = px + (i * ci + c) * plane;
        const double* taps = pw + (o * ci + c) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int dy = ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            const double wt = taps[ky * 3 + kx];
            const std::size_t x0 = tap_lo(dx), x1 = tap_hi(dx, width);
            for (std::size_t r = tap_lo(dy); r < tap_hi(dy, height); ++r) {
              double* orow = out + r * width;
              const double* irow = in + (r + dy) * width + dx;
#pragma omp simd
              for (std::size_t col = x0; col < x1; ++col) orow[col] += wt * irow[col];
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t height,
                      std::size_t width, Tensor& dx, Tensor& dw, Tensor& db) {
  const std::size_t n = x.dim(0), ci = x.dim(1), co = w.dim(0), plane = height * width;
  const double* px = x.data();
  const double* pw = w.data();
  const double* pdy = dy.data();
  double* pdx = dx.data();
  double* pdw = dw.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (Index c = 0; c < static_cast<Index>(ci); ++c) {
      double* gin = pdx + (i * ci + c) * plane;
      std::fill(gin, gin + plane, 0.0);
      for (std::size_t o = 0; o < co; ++o) {
        const double* gout = pdy + (i * co + o) * plane;
        const double* taps = pw + (o * ci + c) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int ddy = ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int ddx = kx - 1;
            const double wt = taps[ky * 3 + kx];
            const std::size_t x0 = tap_lo(ddx), x1 = tap_hi(ddx, width);
            for (std::size_t r = tap_lo(ddy); r < tap_hi(ddy, height); ++r) {
              const double* grow = gout + r * width;
              double* irow = gin + (r + ddy) * width + ddx;
#pragma omp simd
              for (std::size_t col = x0; col < x1; ++col) irow[col] += wt * grow[col];
            }
          }
        }
      }
    }
  }

#pragma omp parallel for collapse(2) schedule(static)
  for (Index o = 0; o < static_cast<Index>(co); ++o) {
    for (Index c = 0; c < static_cast<Index>(ci); ++c) {
      double* taps = pdw + (o * ci + c) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int ddy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int ddx = kx - 1;
          const std::size_t x0 = tap_lo(ddx), x1 = tap_hi(ddx, width);
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double* gout = pdy + (i * co + o) * plane;
            const double* in = px + (i * ci + c) * plane;
            for (std::size_t r = tap_lo(ddy); r < tap_hi(ddy, height); ++r) {
              const double* grow = gout + r * width;
              const double* irow = in + (r + ddy) * width + ddx;
#pragma omp simd reduction(+ : acc)
              for (std::size_t col = x0; col < x1; ++col) acc += grow[col] * irow[col];
            }
          }
          taps[ky * 3 + kx] = acc;
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (Index o = 0; o < static_cast<Index>(co); ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* gout = pdy + (i * co + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += gout[p];
    }
    db[o] = acc;
  }
}

void pairwise_sq_dist(const Tensor& points, const Tensor& centers, Tensor& dist) {
  const std::size_t n = points.dim(0), k = centers.dim(0), d = centers.dim(1);
  const double* pp = points.data();
  const double* pc = centers.data();
  double* pd = dist.data();

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* xi = pp + i * d;
    for (std::size_t j = 0; j < k; ++j) {
      const double* cj = pc + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double e = xi[t] - cj[t];
        acc += e * e;
      }
      pd[i * k + j] = acc;
    }
  }
}

void nearest_center(const Tensor& points, const Tensor& centers, std::span<std::size_t> ids) {
  const std::size_t n = points.dim(0), k = centers.dim(0), d = centers.dim(1);
  const double* pp = points.data();
  const double* pc = centers.data();

#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* xi = pp + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double* cj = pc + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double e = xi[t] - cj[t];
        acc += e * e;
      }
      if (acc < best) {
        best = acc;
        arg = j;
      }
    }
    ids[i] = arg;
  }
}

}  // namespace cnorm::kernels
