#include "cnorm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cnorm/error.hpp"
#include "cnorm/kernels.hpp"

namespace cnorm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> data) {
  Shape s{data.size()};
  return Tensor(std::move(s), std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t stride = data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t stride = data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                     shape_string(t.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  double scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  return max_abs_diff(a, b) / scale;
}

std::uint64_t Rng::mix(std::uint64_t z) noexcept {
  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double stddev) noexcept {
  // Box-Muller; u1 is shifted into (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) noexcept {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

Tensor tensor_create(std::span<const std::int64_t> extents, const Fill& fill, Rng* rng) {
  if (extents.empty()) throw ShapeError("tensor_create: empty shape");
  Shape shape;
  for (auto e : extents) {
    if (e <= 0) throw ShapeError("tensor_create: extent " + std::to_string(e) + " must be >= 1");
    shape.push_back(static_cast<std::size_t>(e));
  }
  Tensor t(std::move(shape));
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, ConstantFill>) {
          t.fill(f.value);
        } else {
          if (rng == nullptr) throw ConfigError("tensor_create: random fill needs an Rng");
          for (auto& v : t.values()) {
            if constexpr (std::is_same_v<F, UniformFill>)
              v = rng->uniform(f.lo, f.hi);
            else
              v = rng->normal(f.mean, f.stddev);
          }
        }
      },
      fill);
  return t;
}

Tensor tensor_create(std::initializer_list<std::int64_t> extents, const Fill& fill, Rng* rng) {
  return tensor_create(std::span<const std::int64_t>(extents.begin(), extents.size()), fill, rng);
}

Moments masked_moments(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank(x, 3, "masked_moments");
  if (mask.size() != x.dim(0))
    throw ShapeError("masked_moments: mask has " + std::to_string(mask.size()) + " entries for N=" +
                     std::to_string(x.dim(0)));
  const bool any = std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  if (!any) throw EmptySelectionError("masked_moments: mask selects no samples");
  Moments m{Tensor({x.dim(1)}), Tensor({x.dim(1)}), 0};
  m.count = kernels::channel_moments(x, mask, m.mean.values(), m.var.values());
  return m;
}

Moments channel_moments(const Tensor& x) {
  require_rank(x, 3, "channel_moments");
  Moments m{Tensor({x.dim(1)}), Tensor({x.dim(1)}), 0};
  m.count = kernels::channel_moments(x, {}, m.mean.values(), m.var.values());
  return m;
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value at element " +
                         std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace cnorm
