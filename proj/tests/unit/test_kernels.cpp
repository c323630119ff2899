#include <doctest.h>

#include <vector>

#include "cnorm/kernels.hpp"
#include "cnorm/reference.hpp"
#include "helpers.hpp"

using namespace cnorm;

TEST_CASE("parallel kernels agree with the serial reference") {
  Rng rng(21);

  SUBCASE("channel_moments") {
    const Tensor x = testing::randn({9, 4, 6}, rng, 1.0, 3.0);
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 0, 0, 1, 1};
    for (int pass = 0; pass < 2; ++pass) {
      std::span<const std::uint8_t> m = pass ? std::span<const std::uint8_t>(mask) : std::span<const std::uint8_t>();
      std::vector<double> m1(4), v1(4), m2(4), v2(4);
      CHECK(kernels::channel_moments(x, m, m1, v1) == reference::channel_moments(x, m, m2, v2));
      for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(m1[c] - m2[c]) < 1e-13);
        CHECK(std::abs(v1[c] - v2[c]) < 1e-12);
      }
    }
  }

  SUBCASE("dense") {
    const Tensor x = testing::randn({5, 3, 4}, rng), w = testing::randn({7, 12}, rng), b = testing::randn({7}, rng);
    Tensor y1({5, 7}), y2({5, 7});
    kernels::dense_forward(x, w, b, y1);
    reference::dense_forward(x, w, b, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-12);

    const Tensor dy = testing::randn({5, 7}, rng);
    Tensor dx1(x.shape()), dw1(w.shape()), db1({7}), dx2(x.shape()), dw2(w.shape()), db2({7});
    kernels::dense_backward(x, w, dy, dx1, dw1, db1);
    reference::dense_backward(x, w, dy, dx2, dw2, db2);
    CHECK(max_abs_diff(dx1, dx2) < 1e-12);
    CHECK(max_abs_diff(dw1, dw2) < 1e-12);
    CHECK(max_abs_diff(db1, db2) < 1e-12);
  }

  SUBCASE("conv3x3") {
    const std::size_t h = 5, wd = 6;
    const Tensor x = testing::randn({3, 2, h * wd}, rng), w = testing::randn({4, 2, 9}, rng), b = testing::randn({4}, rng);
    Tensor y1({3, 4, h * wd}), y2({3, 4, h * wd});
    kernels::conv3x3_forward(x, w, b, h, wd, y1);
    reference::conv3x3_forward(x, w, b, h, wd, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-12);

    const Tensor dy = testing::randn(y1.shape(), rng);
    Tensor dx1(x.shape()), dw1(w.shape()), db1({4}), dx2(x.shape()), dw2(w.shape()), db2({4});
    kernels::conv3x3_backward(x, w, dy, h, wd, dx1, dw1, db1);
    reference::conv3x3_backward(x, w, dy, h, wd, dx2, dw2, db2);
    CHECK(max_abs_diff(dx1, dx2) < 1e-12);
    CHECK(max_abs_diff(dw1, dw2) < 1e-12);
    CHECK(max_abs_diff(db1, db2) < 1e-12);
  }

  SUBCASE("distances and nearest centers") {
    const Tensor p = testing::randn({40, 3}, rng), c = testing::randn({5, 3}, rng);
    Tensor d1({40, 5}), d2({40, 5});
    kernels::pairwise_sq_dist(p, c, d1);
    reference::pairwise_sq_dist(p, c, d2);
    CHECK(max_abs_diff(d1, d2) < 1e-12);
    std::vector<std::size_t> i1(40), i2(40);
    kernels::nearest_center(p, c, i1);
    reference::nearest_center(p, c, i2);
    CHECK(i1 == i2);
  }
}

TEST_CASE("conv3x3 matches a direct zero-padded sum at a corner") {
  // 3x3 image, one channel, all-ones kernel: the corner output sums a 2x2 block.
  const Tensor x({1, 1, 9}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor w({1, 1, 9}, 1.0);
  Tensor y({1, 1, 9});
  kernels::conv3x3_forward(x, w, Tensor({1}), 3, 3, y);
  CHECK(y[0] == 1 + 2 + 4 + 5);
  CHECK(y[4] == 45);
  CHECK(y[8] == 5 + 6 + 8 + 9);
}

TEST_CASE("nearest_center prefers the lower index on ties") {
  const Tensor p({1, 1}, {0.0});
  const Tensor c({2, 1}, {-1.0, 1.0});
  std::vector<std::size_t> ids(1);
  kernels::nearest_center(p, c, ids);
  CHECK(ids[0] == 0);
}
