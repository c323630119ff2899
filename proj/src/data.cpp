#include "cnorm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cnorm/error.hpp"

namespace cnorm {
namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class IdxReader {
 public:
  IdxReader(std::vector<unsigned char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t count) const {
    if (pos_ + count > bytes_.size())
      throw FormatError(path_ + ": truncated at byte offset " + std::to_string(bytes_.size()) + ", missing " +
                        std::to_string(pos_ + count - bytes_.size()) + " bytes");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

  const unsigned char* take(std::size_t count) {
    need(count);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += count;
    return p;
  }

  std::size_t offset() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void expect_magic(IdxReader& r, std::uint32_t magic) {
  const std::uint32_t got = r.u32();
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x (want 0x%08x) at byte offset 0", got, magic);
    throw FormatError(r.path() + ": " + buf);
  }
}

std::size_t count_classes(const std::vector<std::size_t>& labels) {
  std::size_t top = 0;
  for (auto v : labels) top = std::max(top, v + 1);
  return top;
}

}  // namespace

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t c = ds.x.dim(1), l = ds.x.dim(2), per = c * l;
  Dataset out;
  if (!idx.empty()) out.x = Tensor({idx.size(), c, l});  // an empty subset keeps an empty tensor
  out.classes = ds.classes;
  out.height = ds.height;
  out.width = ds.width;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const std::size_t i = idx[a];
    if (i >= ds.size()) throw ShapeError("subset: index out of range");
    std::copy_n(ds.x.data() + i * per, per, out.x.data() + a * per);
    out.labels.push_back(ds.labels[i]);
    if (!ds.true_contexts.empty()) out.true_contexts.push_back(ds.true_contexts[i]);
    if (!ds.domains.empty()) out.domains.push_back(ds.domains[i]);
  }
  return out;
}

Split split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw ConfigError("test_fraction must be in [0, 1)");
  Rng rng(seed, 0x5b11);
  const auto order = permutation(ds.size(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  const std::span<const std::size_t> all(order);
  return {subset(ds, all.subspan(n_test)), subset(ds, all.first(n_test))};
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t subset_n, std::uint64_t seed) {
  IdxReader img(read_file(images_path), images_path);
  expect_magic(img, 0x00000803);
  const std::size_t n = img.u32(), rows = img.u32(), cols = img.u32();
  const unsigned char* pixels = img.take(n * rows * cols);

  IdxReader lab(read_file(labels_path), labels_path);
  expect_magic(lab, 0x00000801);
  const std::size_t nl = lab.u32();
  if (nl != n)
    throw FormatError(labels_path + ": " + std::to_string(nl) + " labels for " + std::to_string(n) +
                      " images (count at byte offset 4)");
  const unsigned char* labels = lab.take(n);

  Dataset all;
  all.height = rows;
  all.width = cols;
  all.x = Tensor({n, 1, rows * cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) all.x[i] = pixels[i] / 255.0;
  all.labels.assign(labels, labels + n);
  all.classes = count_classes(all.labels);

  if (subset_n == 0) return all;
  Rng rng(seed, 0x1d7);
  auto order = permutation(n, rng);
  order.resize(std::min(subset_n, n));
  Dataset out = subset(all, order);
  out.classes = all.classes;
  return out;
}

Dataset gen_synthetic_gmm(std::size_t k_true, std::size_t n, std::size_t dim, double separation, Rng& rng) {
  if (k_true == 0) throw ConfigError("synthetic_gmm: K_true must be >= 1");
  if (dim < k_true) throw ConfigError("synthetic_gmm: need dim >= K_true to place means on distinct axes");
  if (n == 0) throw ConfigError("synthetic_gmm: n must be >= 1");
  // Axis-aligned means a * e_k are a*sqrt(2) apart.
  const double a = separation / std::sqrt(2.0);
  const auto order = permutation(n, rng);
  Dataset ds;
  ds.x = Tensor({n, dim, 1});
  ds.classes = k_true;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t comp = order[i] % k_true;
    ds.labels[i] = comp;
    for (std::size_t t = 0; t < dim; ++t) ds.x.at(i, t, 0) = rng.normal() + (t == comp ? a : 0.0);
  }
  ds.true_contexts = ds.labels;
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    bool numeric = true;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const char* b = cell.data();
      while (b < cell.data() + cell.size() && *b == ' ') ++b;
      auto [p, ec] = std::from_chars(b, cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw FormatError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (row.size() < 2) throw FormatError(path + ":" + std::to_string(lineno) + ": need a label and features");
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) +
                        " fields, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");

  const std::size_t n = rows.size(), d = rows.front().size() - 1;
  Dataset ds;
  ds.x = Tensor({n, d, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double label = rows[i][0];
    if (label < 0 || label != std::floor(label))
      throw FormatError(path + ": label on data row " + std::to_string(i + 1) + " is not a non-negative integer");
    ds.labels.push_back(static_cast<std::size_t>(label));
    for (std::size_t t = 0; t < d; ++t) ds.x.at(i, t, 0) = rows[i][t + 1];
  }
  ds.classes = count_classes(ds.labels);
  return ds;
}

}  // namespace cnorm
