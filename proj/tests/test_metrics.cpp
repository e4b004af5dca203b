#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "memfield/metrics.hpp"

using namespace memfield;
using namespace memfield::metrics;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("mse: identical, unit difference, checkerboard") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(8, 8);
  CHECK(mse(a, a) == 0.0);

  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(6, 6);
  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(6, 6);
  CHECK(mse(ones, zeros) == 1.0);

  Eigen::MatrixXd board(4, 4), inverse(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      board(r, c) = (r + c) % 2;
      inverse(r, c) = 1 - (r + c) % 2;
    }
  CHECK(mse(board, inverse) == 1.0);

  CHECK_THROWS_AS(mse(ones, Eigen::MatrixXd::Ones(5, 6)), ConfigError);
}

TEST_CASE("psnr: zero dB anchor, cap, and the 255-scale value") {
  CHECK(psnr_from_mse(255.0 * 255.0, 255.0) == 0.0);
  CHECK(psnr_from_mse(0.0, 1.0) == 100.0);
  CHECK(psnr_from_mse(1.0, 255.0) == doctest::Approx(48.1308).epsilon(1e-4));

  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(4, 4, 10.0);
  CHECK(psnr(a, a, 255.0) == 100.0);
}

TEST_CASE("psnr strictly decreases as mse increases") {
  double prev = psnr_from_mse(1e-6, 1.0);
  for (double m : {1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0}) {
    const double p = psnr_from_mse(m, 1.0);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim: identity, symmetry, range, constant closed form") {
  Rng rng = make_rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(12, 12), y(12, 12);
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      x(r, c) = u(rng);
      y(r, c) = u(rng);
    }

  CHECK(ssim(x, x, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(x, y, 1.0) == doctest::Approx(ssim(y, x, 1.0)).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 12; ++c) y(r, c) = u(rng);
    const double v = ssim(x, y, 1.0);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(v < 1.0);  // differing images never reach 1
  }

  // constant images, single window: sigma = 0, so c = s = 1 and
  // SSIM = (2ab + C1) / (a^2 + b^2 + C1)
  const double a = 0.7, b = 0.4, c1 = 0.01 * 0.01;
  Eigen::MatrixXd ca = Eigen::MatrixXd::Constant(8, 8, a);
  Eigen::MatrixXd cb = Eigen::MatrixXd::Constant(8, 8, b);
  const double expected = (2 * a * b + c1) / (a * a + b * b + c1);
  CHECK(ssim(ca, cb, 1.0) == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(ssim(Eigen::MatrixXd::Ones(4, 4), Eigen::MatrixXd::Ones(4, 4), 1.0),
                  ConfigError);  // window 8 larger than the image
}

TEST_CASE("mse and psnr are invariant under a common pixel permutation") {
  Rng rng = make_rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(6, 6), y(6, 6);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      x(r, c) = u(rng);
      y(r, c) = u(rng);
    }
  std::vector<int> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd xp(6, 6), yp(6, 6);
  for (int i = 0; i < 36; ++i) {
    xp(perm[static_cast<std::size_t>(i)] / 6, perm[static_cast<std::size_t>(i)] % 6) = x(i / 6, i % 6);
    yp(perm[static_cast<std::size_t>(i)] / 6, perm[static_cast<std::size_t>(i)] % 6) = y(i / 6, i % 6);
  }
  CHECK(mse(x, y) == mse(xp, yp));
  CHECK(psnr(x, y, 1.0) == psnr(xp, yp, 1.0));

  // ssim under a window-preserving translation: the same crop of both images
  Eigen::MatrixXd bx(10, 10), by(10, 10);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      bx(r, c) = u(rng);
      by(r, c) = u(rng);
    }
  const double s0 = ssim(bx.block(0, 0, 9, 9), by.block(0, 0, 9, 9), 1.0);
  Eigen::MatrixXd sx(10, 10), sy(10, 10);
  sx.block(1, 1, 9, 9) = bx.block(0, 0, 9, 9);
  sy.block(1, 1, 9, 9) = by.block(0, 0, 9, 9);
  const double s1 = ssim(sx.block(1, 1, 9, 9), sy.block(1, 1, 9, 9), 1.0);
  CHECK(s0 == s1);
}

TEST_SUITE_END();
