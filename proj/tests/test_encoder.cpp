#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "memfield/encoder.hpp"

using namespace memfield;
using namespace memfield::enc;

TEST_SUITE_BEGIN("encoder");

TEST_CASE("cordic: zero angle and quarter turn") {
  auto [s0, c0] = cordic_sincos(0.0, 24);
  CHECK(std::abs(s0) < std::ldexp(1.0, -22));
  CHECK(std::abs(c0 - 1.0) < std::ldexp(1.0, -22));

  auto [s1, c1] = cordic_sincos(std::numbers::pi / 2, 32);
  CHECK(std::abs(s1 - 1.0) < 1e-8);
  CHECK(std::abs(c1) < 1e-8);
}

TEST_CASE("cordic: sweep against the reference sinusoid") {
  Rng rng = make_rng(12);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  double max_err = 0.0, max_norm_err = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double a = u(rng);
    auto [s, c] = cordic_sincos(a, 24);
    max_err = std::max(max_err, std::abs(s - std::sin(a)));
    max_err = std::max(max_err, std::abs(c - std::cos(a)));
    max_norm_err = std::max(max_norm_err, std::abs(s * s + c * c - 1.0));
  }
  CHECK(max_err < 1e-6);
  CHECK(max_norm_err < 1e-6);
}

TEST_CASE("cordic: error shrinks with iteration count") {
  const double a = 1.1;
  for (int it : {4, 8, 12, 16, 20}) {
    auto [s, c] = cordic_sincos(a, it);
    const double tol = std::ldexp(1.0, -it + 2);
    CHECK(std::abs(s - std::sin(a)) <= tol);
    CHECK(std::abs(c - std::cos(a)) <= tol);
  }
  CHECK_THROWS_AS(cordic_sincos(1.0, 0), ConfigError);
}

TEST_CASE("basic encoding hits the unit-circle anchors") {
  EncoderConfig cfg;
  cfg.mode = EncoderMode::Basic;
  cfg.input_dim = 1;
  Encoder e(cfg);
  std::vector<double> x0{0.0};
  auto f0 = e.encode(x0);
  CHECK(f0[0] == doctest::Approx(1.0).epsilon(1e-6));  // cos
  CHECK(f0[1] == doctest::Approx(0.0).epsilon(1e-6));  // sin

  std::vector<double> xq{0.25};
  auto fq = e.encode(xq);
  CHECK(fq[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(fq[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("basic encoding is 1-periodic") {
  EncoderConfig cfg;
  cfg.mode = EncoderMode::Basic;
  cfg.input_dim = 3;
  Encoder e(cfg);
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x{u(rng), u(rng), u(rng)};
    std::vector<double> x1{x[0] + 1.0, x[1] + 1.0, x[2] + 1.0};
    auto a = e.encode(x);
    auto b = e.encode(x1);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("output dimension formula holds across modes") {
  Rng rng = make_rng(9);
  std::uniform_int_distribution<int> dd(1, 4), mm(1, 9), coin(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    EncoderConfig cfg;
    cfg.input_dim = dd(rng);
    cfg.feature_count = mm(rng);
    cfg.concat_raw_input = coin(rng) == 1;
    const int mode = trial % 4;
    std::vector<double> x(static_cast<std::size_t>(cfg.input_dim), 0.3);
    if (mode == 0) cfg.mode = EncoderMode::None;
    if (mode == 1) cfg.mode = EncoderMode::Basic;
    if (mode == 2) {
      cfg.mode = EncoderMode::Positional;
      cfg.spacing = coin(rng) ? FrequencySpacing::Log2 : FrequencySpacing::Linear;
    }
    if (mode == 3) {
      cfg.mode = EncoderMode::Gaussian;
      device::NoiseModel n = device::NoiseModel::fitted(trial + 1);
      Rng form_rng = make_rng(static_cast<std::uint64_t>(trial) + 1);
      auto arr = device::form_random_matrix(cfg.input_dim, cfg.feature_count, n,
                                            form_rng);
      Encoder e(cfg, arr, n);
      CHECK(e.encode(x).size() == cfg.output_dim());
      continue;
    }
    Encoder e(cfg);
    CHECK(e.encode(x).size() == cfg.output_dim());
  }
}

TEST_CASE("the CT configuration yields a 131-long feature vector") {
  EncoderConfig cfg;
  cfg.mode = EncoderMode::Gaussian;
  cfg.input_dim = 3;
  cfg.feature_count = 64;
  cfg.concat_raw_input = true;
  device::NoiseModel n = device::NoiseModel::fitted(2);
  Rng rng = make_rng(2);
  auto arr = device::form_random_matrix(3, 64, n, rng);
  Encoder e(cfg, arr, n);
  CHECK(cfg.output_dim() == 131);
  std::vector<double> x{0.1, 0.2, 0.3};
  CHECK(e.encode(x).size() == 131);
}

TEST_CASE("standardization: constant array rejected, moments forced") {
  device::NoiseModel quiet = device::NoiseModel::noiseless();
  Rng rng = make_rng(4);
  auto flat = device::form_random_matrix(4, 4, quiet, rng);
  CHECK_THROWS_AS(standardize_formed_matrix(flat, 1.0), ConfigError);

  device::NoiseModel n = device::NoiseModel::fitted(4);
  auto arr = device::form_random_matrix(100, 100, n, rng);
  const double sigma = 2.5;
  auto b = standardize_formed_matrix(arr, sigma);
  const double mean = b.mean();
  const double std = std::sqrt((b.array() - mean).square().mean());
  CHECK(std::abs(mean) < 1e-12 * sigma);
  CHECK(std::abs(std - sigma) < 1e-9);
}

TEST_CASE("standardized projection passes a normality check") {
  device::NoiseModel n = device::NoiseModel::fitted(6);
  Rng rng = make_rng(6);
  auto arr = device::form_random_matrix(100, 100, n, rng);
  auto b = standardize_formed_matrix(arr, 1.0);
  std::vector<double> v(b.data(), b.data() + b.size());
  std::sort(v.begin(), v.end());
  double d_stat = 0.0;
  const double nn = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = 0.5 * std::erfc(-v[i] / std::sqrt(2.0));
    d_stat = std::max(d_stat, std::abs(f - (static_cast<double>(i) + 1) / nn));
    d_stat = std::max(d_stat, std::abs(f - static_cast<double>(i) / nn));
  }
  CHECK(d_stat < 1.63 / std::sqrt(nn));
}

TEST_CASE("gaussian encoding is deterministic and matches the digital product") {
  EncoderConfig cfg;
  cfg.mode = EncoderMode::Gaussian;
  cfg.input_dim = 2;
  cfg.feature_count = 16;
  cfg.gaussian_sigma = 3.0;
  device::NoiseModel n = device::NoiseModel::fitted(7);
  Rng rng = make_rng(7);
  auto arr = device::form_random_matrix(2, 16, n, rng);
  Encoder e(cfg, arr, n);

  std::vector<double> x{0.37, -0.22};
  auto f1 = e.encode(x);
  auto f2 = e.encode(x);
  CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);  // frozen matrix, frozen output

  // same seed regenerates the same formed matrix, hence the same encoding
  Rng rng2 = make_rng(7);
  auto arr2 = device::form_random_matrix(2, 16, n, rng2);
  Encoder e2(cfg, arr2, n);
  CHECK((e2.encode(x) - f1).cwiseAbs().maxCoeff() == 0.0);

  // the analog projection equals B*x on the frozen standardized matrix
  const Eigen::MatrixXd& b = e.gaussian_matrix();
  Eigen::Vector2d xv(x[0], x[1]);
  Eigen::VectorXd y = b * xv;
  for (int k = 0; k < 16; ++k) {
    CHECK(f1[k] == doctest::Approx(std::cos(2 * std::numbers::pi * y[k])).epsilon(1e-5));
    CHECK(f1[16 + k] == doctest::Approx(std::sin(2 * std::numbers::pi * y[k])).epsilon(1e-5));
  }
}

TEST_CASE("encoder input jacobian matches finite differences") {
  Rng rng = make_rng(11);
  std::uniform_real_distribution<double> u(-0.5, 0.5);

  // High iteration count pushes the CORDIC error floor far below the finite
  // difference step, so the probe sees the smooth underlying sinusoids.
  auto check_jacobian = [&](const Encoder& e, std::vector<double> x) {
    const auto jac = e.input_jacobian(x);
    const double h = 1e-5;
    for (int i = 0; i < static_cast<int>(x.size()); ++i) {
      auto xp = x, xm = x;
      xp[static_cast<std::size_t>(i)] += h;
      xm[static_cast<std::size_t>(i)] -= h;
      const Eigen::VectorXd fd = (e.encode(xp) - e.encode(xm)) / (2 * h);
      CHECK((fd - jac.col(i)).cwiseAbs().maxCoeff() < 1e-5);
    }
  };

  EncoderConfig basic;
  basic.mode = EncoderMode::Basic;
  basic.input_dim = 2;
  basic.concat_raw_input = true;
  basic.cordic_iterations = 50;
  check_jacobian(Encoder(basic), {u(rng), u(rng)});

  EncoderConfig pos;
  pos.mode = EncoderMode::Positional;
  pos.input_dim = 2;
  pos.feature_count = 4;
  pos.spacing = FrequencySpacing::Linear;
  pos.positional_scale = 2.0;
  pos.cordic_iterations = 50;
  check_jacobian(Encoder(pos), {u(rng), u(rng)});

  EncoderConfig gauss;
  gauss.mode = EncoderMode::Gaussian;
  gauss.input_dim = 3;
  gauss.feature_count = 8;
  gauss.gaussian_sigma = 1.5;
  gauss.cordic_iterations = 50;
  device::NoiseModel n = device::NoiseModel::fitted(12);
  Rng form_rng = make_rng(12);
  auto arr = device::form_random_matrix(3, 8, n, form_rng);
  check_jacobian(Encoder(gauss, arr, n), {u(rng), u(rng), u(rng)});
}

TEST_SUITE_END();
