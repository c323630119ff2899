#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cnorm/data.hpp"
#include "cnorm/error.hpp"
#include "helpers.hpp"

using namespace cnorm;

TEST_CASE("idx loader") {
  testing::TempDir dir("idx");
  const auto im = dir.file("img"), lb = dir.file("lab");
  testing::write_idx_pair(im, lb, 12, 3, 2);

  SUBCASE("full file") {
    const Dataset ds = load_mnist_idx(im, lb, 0, 1);
    CHECK(ds.x.shape() == Shape{12, 1, 6});
    CHECK(ds.height == 3);
    CHECK(ds.width == 2);
    CHECK(ds.classes == 10);
    CHECK(ds.labels[11] == 1);
    CHECK(ds.x.at(5, 0, 4) == (5 * 7 + 4) / 255.0);
  }
  SUBCASE("seeded subset keeps image/label pairing") {
    const Dataset a = load_mnist_idx(im, lb, 5, 3), b = load_mnist_idx(im, lb, 5, 3);
    CHECK(a.x == b.x);
    CHECK(a.size() == 5);
    CHECK(a.classes == 10);
    std::set<std::size_t> firsts;
    for (std::size_t i = 0; i < 5; ++i) {
      // Recover the source index from pixel 0 = (7 i) % 256 / 255.
      const auto src = static_cast<std::size_t>(std::lround(a.x.at(i, 0, 0) * 255.0)) / 7;
      CHECK(a.labels[i] == src % 10);
      firsts.insert(src);
    }
    CHECK(firsts.size() == 5);
    CHECK(load_mnist_idx(im, lb, 50, 3).size() == 12);
  }
  SUBCASE("truncated image file names the offset") {
    auto bytes = testing::read_text(im);
    bytes.resize(bytes.size() - 5);
    testing::write_text(im, bytes);
    try {
      load_mnist_idx(im, lb, 0, 1);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("byte offset 83") != std::string::npos);  // 16 header + 72 pixels - 5
      CHECK(msg.find("missing 5") != std::string::npos);
    }
  }
  SUBCASE("swapped files are rejected by magic") {
    CHECK_THROWS_AS(load_mnist_idx(lb, im, 0, 1), FormatError);
  }
  SUBCASE("label count mismatch") {
    testing::write_idx_pair(dir.file("img2"), dir.file("lab2"), 10, 3, 2);
    CHECK_THROWS_AS(load_mnist_idx(im, dir.file("lab2"), 0, 1), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mnist_idx(dir.file("nope"), lb, 0, 1), FormatError);
  }
}

TEST_CASE("synthetic gmm") {
  Rng a(5, 1), b(5, 1);
  const Dataset ds = gen_synthetic_gmm(3, 3000, 8, 6.0, a);
  CHECK(ds.x == gen_synthetic_gmm(3, 3000, 8, 6.0, b).x);
  CHECK(ds.x.shape() == Shape{3000, 8, 1});
  CHECK(ds.classes == 3);
  CHECK(ds.true_contexts == ds.labels);

  std::vector<std::size_t> count(3, 0);
  std::vector<std::vector<double>> mean(3, std::vector<double>(8, 0.0));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ++count[ds.labels[i]];
    for (std::size_t d = 0; d < 8; ++d) mean[ds.labels[i]][d] += ds.x.at(i, d, 0);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(count[k] == 1000);
    for (auto& m : mean[k]) m /= 1000.0;
  }
  // Pairwise distance between component means is the separation.
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = p + 1; q < 3; ++q) {
      double s = 0.0;
      for (std::size_t d = 0; d < 8; ++d) s += (mean[p][d] - mean[q][d]) * (mean[p][d] - mean[q][d]);
      CHECK(std::abs(std::sqrt(s) - 6.0) < 0.3);
    }
  // Unit variance within a component.
  double q = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 0)
      for (std::size_t d = 0; d < 8; ++d) q += (ds.x.at(i, d, 0) - mean[0][d]) * (ds.x.at(i, d, 0) - mean[0][d]);
  CHECK(std::abs(q / 8000.0 - 1.0) < 0.1);

  Rng c(1);
  CHECK_THROWS_AS(gen_synthetic_gmm(4, 100, 3, 6.0, c), ConfigError);
}

TEST_CASE("split and subset") {
  Rng rng(6);
  const Dataset ds = gen_synthetic_gmm(2, 101, 4, 3.0, rng);
  const Split s = split_dataset(ds, 0.2, 9);
  CHECK(s.test.size() == 20);
  CHECK(s.train.size() == 81);
  CHECK(s.train.true_contexts.size() == 81);
  CHECK(split_dataset(ds, 0.2, 9).train.x == s.train.x);
  CHECK(split_dataset(ds, 0.0, 9).test.size() == 0);
  CHECK_THROWS_AS(split_dataset(ds, 1.0, 9), ConfigError);

  const std::vector<std::size_t> idx{4, 4, 0};
  const Dataset sub = subset(ds, idx);
  CHECK(sub.labels == std::vector<std::size_t>{ds.labels[4], ds.labels[4], ds.labels[0]});
  CHECK(sub.x.at(2, 1, 0) == ds.x.at(0, 1, 0));
  const std::vector<std::size_t> bad{200};
  CHECK_THROWS_AS(subset(ds, bad), ShapeError);
}

TEST_CASE("csv loader") {
  testing::TempDir dir("csv");
  SUBCASE("header and rows") {
    testing::write_text(dir.file("a.csv"), "label,f1,f2\n1,0.5,2\n0,-1,3e-1\n2,4,4\n");
    const Dataset ds = load_csv(dir.file("a.csv"));
    CHECK(ds.x.shape() == Shape{3, 2, 1});
    CHECK(ds.labels == std::vector<std::size_t>{1, 0, 2});
    CHECK(ds.classes == 3);
    CHECK(ds.x.at(1, 1, 0) == 0.3);
  }
  SUBCASE("no header") {
    testing::write_text(dir.file("b.csv"), "0,1\n1,2\n");
    CHECK(load_csv(dir.file("b.csv")).size() == 2);
  }
  SUBCASE("malformed") {
    testing::write_text(dir.file("c.csv"), "0,1,2\n1,2\n");
    CHECK_THROWS_AS(load_csv(dir.file("c.csv")), FormatError);
    testing::write_text(dir.file("d.csv"), "0,1\n1.5,2\n");
    CHECK_THROWS_AS(load_csv(dir.file("d.csv")), FormatError);
    testing::write_text(dir.file("e.csv"), "a,b\n");
    CHECK_THROWS_AS(load_csv(dir.file("e.csv")), FormatError);
  }
}
