#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cnorm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. Activations use the [N, C, L] layout,
// with spatial maps flattened into L = H * W.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Row i of a rank >= 2 tensor, viewed as a contiguous span.
  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);
void require_rank(const Tensor& t, std::size_t rank, const char* what);
void require_finite(const Tensor& t, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

// Normwise relative error ||a - b||_inf / max(||a||_inf, ||b||_inf), with the
// denominator floored at `floor` so all-zero tensors compare by absolute error.
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

// Counter-based generator: the k-th draw is a pure function of (seed, stream, k),
// so a value stream is reproducible from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t next_u64() noexcept { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  double uniform() noexcept;  // [0, 1)
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0) noexcept;
  std::size_t below(std::size_t n) noexcept;  // uniform integer in [0, n)

  std::uint64_t counter() const noexcept { return counter_; }

  static std::uint64_t mix(std::uint64_t z) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

struct ConstantFill {
  double value = 0.0;
};
struct UniformFill {
  double lo = 0.0;
  double hi = 1.0;
};
struct NormalFill {
  double mean = 0.0;
  double stddev = 1.0;
};
using Fill = std::variant<ConstantFill, UniformFill, NormalFill>;

// Extents are signed so that zero and negative requests are reported, not wrapped.
Tensor tensor_create(std::span<const std::int64_t> extents, const Fill& fill, Rng* rng = nullptr);
Tensor tensor_create(std::initializer_list<std::int64_t> extents, const Fill& fill,
                     Rng* rng = nullptr);

struct Moments {
  Tensor mean;  // [C]
  Tensor var;   // [C], biased
  std::size_t count = 0;  // elements reduced per channel
};

// Per-channel moments of x[N, C, L] over every (n, l) whose sample is selected.
Moments masked_moments(const Tensor& x, std::span<const std::uint8_t> mask);
Moments channel_moments(const Tensor& x);

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace cnorm
