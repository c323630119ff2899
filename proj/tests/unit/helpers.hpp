#pragma once

#include <cmath>
#include <vector>

#include <unistd.h>

#include "cnorm/tensor.hpp"

namespace testing {

inline cnorm::Tensor randn(const cnorm::Shape& shape, cnorm::Rng& rng, double mean = 0.0, double sd = 1.0) {
  cnorm::Tensor t(shape);
  for (auto& v : t.values()) v = rng.normal(mean, sd);
  return t;
}

inline double dot(const cnorm::Tensor& a, const cnorm::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sum(const cnorm::Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

inline bool all_zero(const cnorm::Tensor& a) {
  for (double v : a.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace testing

namespace testing {

// Sample i of x[N, C, L] as a batch of one.
inline cnorm::Tensor subset_rows(const cnorm::Tensor& x, std::size_t i) {
  const std::size_t per = x.size() / x.dim(0);
  std::vector<double> v(x.data() + i * per, x.data() + (i + 1) * per);
  return cnorm::Tensor({1, x.dim(1), x.dim(2)}, std::move(v));
}

}  // namespace testing

#include <filesystem>
#include <fstream>
#include <string>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cnorm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// IDX image/label pair: n images of rows x cols with pixel (i, p) = (i * 7 + p) % 256
// and label i % 10.
inline void write_idx_pair(const std::string& images, const std::string& labels, std::uint32_t n,
                           std::uint32_t rows, std::uint32_t cols) {
  std::vector<unsigned char> im, lb;
  put_u32(im, 0x803);
  put_u32(im, n);
  put_u32(im, rows);
  put_u32(im, cols);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t p = 0; p < rows * cols; ++p) im.push_back(static_cast<unsigned char>((i * 7 + p) % 256));
  put_u32(lb, 0x801);
  put_u32(lb, n);
  for (std::uint32_t i = 0; i < n; ++i) lb.push_back(static_cast<unsigned char>(i % 10));
  write_bytes(images, im);
  write_bytes(labels, lb);
}

}  // namespace testing
