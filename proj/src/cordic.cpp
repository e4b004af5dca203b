#include "memfield/cordic.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace memfield::enc {

namespace {

constexpr int kFracBits = 61;  // Q61: |values| < 4
constexpr int kMaxIter = 61;
constexpr double kOne = static_cast<double>(1ULL << kFracBits);

struct Tables {
  std::array<std::int64_t, kMaxIter> atan_q{};
  std::array<std::int64_t, kMaxIter + 1> gain_q{};  // K_n per iteration count

  Tables() {
    double k = 1.0;
    gain_q[0] = static_cast<std::int64_t>(std::llround(k * kOne));
    for (int i = 0; i < kMaxIter; ++i) {
      const double a = std::atan(std::ldexp(1.0, -i));
      atan_q[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::llround(a * kOne));
      k /= std::sqrt(1.0 + std::ldexp(1.0, -2 * i));
      gain_q[static_cast<std::size_t>(i) + 1] = static_cast<std::int64_t>(std::llround(k * kOne));
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

std::pair<double, double> cordic_sincos(double angle_rad, int iterations) {
  if (iterations < 1) throw ConfigError("cordic requires at least 1 iteration");
  const int n = std::min(iterations, kMaxIter);

  // reduce to [-pi, pi], then fold into [-pi/2, pi/2] with a sign flip
  double a = std::remainder(angle_rad, 2.0 * std::numbers::pi);
  double flip = 1.0;
  if (a > std::numbers::pi / 2) {
    a -= std::numbers::pi;
    flip = -1.0;
  } else if (a < -std::numbers::pi / 2) {
    a += std::numbers::pi;
    flip = -1.0;
  }

  const auto& t = tables();
  std::int64_t x = t.gain_q[static_cast<std::size_t>(n)];
  std::int64_t y = 0;
  std::int64_t z = static_cast<std::int64_t>(std::llround(a * kOne));
  for (int i = 0; i < n; ++i) {
    const std::int64_t xs = x >> i;
    const std::int64_t ys = y >> i;
    if (z >= 0) {
      x -= ys;
      y += xs;
      z -= t.atan_q[static_cast<std::size_t>(i)];
    } else {
      x += ys;
      y -= xs;
      z += t.atan_q[static_cast<std::size_t>(i)];
    }
  }
  return {flip * static_cast<double>(y) / kOne,
          flip * static_cast<double>(x) / kOne};
}

}  // namespace memfield::enc
