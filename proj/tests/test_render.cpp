#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "memfield/render.hpp"

using namespace memfield;
using namespace memfield::render;

TEST_SUITE_BEGIN("render");

TEST_CASE("principal-point ray follows the camera forward axis") {
  Camera cam;
  cam.width = 5;
  cam.height = 5;
  cam.cx = 2.5;
  cam.cy = 2.5;
  cam.focal = 5.0;
  // pixel (2,2) center lands exactly on the principal point
  const Ray ray = pixel_ray(cam, 2, 2, 1.0, 2.0);
  CHECK((ray.dir - Eigen::Vector3d(0, 0, -1)).norm() < 1e-12);

  // horizontally adjacent pixels differ only in the x component
  const Ray r0 = pixel_ray(cam, 1, 2, 1.0, 2.0);
  const Ray r1 = pixel_ray(cam, 3, 2, 1.0, 2.0);
  CHECK(std::abs(r0.dir.y() - r1.dir.y()) < 1e-12);
  CHECK(std::abs(r0.dir.z() - r1.dir.z()) < 1e-12);
  CHECK(r0.dir.x() < r1.dir.x());
}

TEST_CASE("full 4x4 image yields 16 unit-norm rays") {
  Camera cam = Camera::look_at({1, 2, 3}, {0, 0, 0}, {0, 1, 0}, 4.0, 4, 4);
  std::vector<std::pair<int, int>> pixels;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) pixels.emplace_back(x, y);
  const auto rays = generate_rays(cam, pixels, 2.0, 6.0);
  CHECK(rays.size() == 16u);
  for (const auto& r : rays) CHECK(std::abs(r.dir.norm() - 1.0) < 1e-9);
  CHECK_THROWS_AS(pixel_ray(cam, 4, 0, 2.0, 6.0), ConfigError);
}

TEST_CASE("midpoint sampling: single sample and the 4-segment case") {
  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  Rng rng = make_rng(1);
  std::vector<double> ts, deltas;

  sample_along_ray(ray, 1, false, rng, &ts, &deltas);
  CHECK(ts == std::vector<double>{0.5});
  CHECK(deltas == std::vector<double>{0.5});  // closed by the far bound

  sample_along_ray(ray, 4, false, rng, &ts, &deltas);
  CHECK(ts[0] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(ts[1] == doctest::Approx(0.375).epsilon(1e-12));
  CHECK(ts[2] == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(ts[3] == doctest::Approx(0.875).epsilon(1e-12));
}

TEST_CASE("stratified draws stay inside their segments, strictly ordered") {
  Ray ray;
  ray.t_near = 2.0;
  ray.t_far = 6.0;
  Rng rng = make_rng(2);
  std::vector<double> ts, deltas;
  const int n = 16;
  const double seg = 4.0 / n;
  for (int trial = 0; trial < 625; ++trial) {  // 10,000 draws total
    sample_along_ray(ray, n, true, rng, &ts, &deltas);
    for (int i = 0; i < n; ++i) {
      CHECK(ts[static_cast<std::size_t>(i)] >= 2.0 + i * seg);
      CHECK(ts[static_cast<std::size_t>(i)] <= 2.0 + (i + 1) * seg);
      if (i > 0) CHECK(ts[static_cast<std::size_t>(i)] > ts[static_cast<std::size_t>(i) - 1]);
    }
  }
}

TEST_CASE("composite: empty medium, opaque limit, energy identity") {
  const int n = 8;
  Eigen::Matrix3Xd colors = Eigen::Matrix3Xd::Zero(3, n);
  Eigen::VectorXd sigmas = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd deltas = Eigen::VectorXd::Constant(n, 0.1);
  const Eigen::Vector3d bg(0.2, 0.4, 0.6);

  auto res = composite(colors, sigmas, deltas, bg);
  CHECK((res.color - bg).norm() == 0.0);
  CHECK(res.weight == 0.0);

  colors.col(0) = Eigen::Vector3d(0.9, 0.1, 0.3);
  sigmas[0] = 500.0;  // sigma*delta = 50
  res = composite(colors, sigmas, deltas, bg);
  CHECK((res.color - Eigen::Vector3d(0.9, 0.1, 0.3)).cwiseAbs().maxCoeff() < 1e-9);

  // random fields: weights monotone transmittance and exact energy identity
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    for (int i = 0; i < n; ++i) sigmas[i] = u(rng);
    std::vector<double> w;
    res = composite(colors, sigmas, deltas, bg, &w);
    CHECK(res.weight <= 1.0 + 1e-12);
    const double expected = 1.0 - std::exp(-sigmas.dot(deltas));
    CHECK(std::abs(res.weight - expected) < 1e-9);
    // transmittance before each sample is non-increasing
    double prev_t = 1.0;
    for (int i = 0; i < n; ++i) {
      const double alpha = 1.0 - std::exp(-sigmas[i] * deltas[i]);
      const double t_i = alpha > 0 ? w[static_cast<std::size_t>(i)] / alpha : prev_t;
      CHECK(t_i <= prev_t + 1e-12);
      prev_t = t_i;
    }
  }

  sigmas[2] = -1.0;
  CHECK_THROWS_AS(composite(colors, sigmas, deltas, bg), ConfigError);
}

TEST_CASE("constant medium matches the analytic transport integral") {
  // For piecewise-constant quadrature the constant case is exact; check at
  // N=4096 against c * (1 - exp(-sigma L)).
  const int n = 4096;
  const double sigma = 0.7, len = 4.0;
  Eigen::Matrix3Xd colors(3, n);
  colors.colwise() = Eigen::Vector3d(0.3, 0.5, 0.8);
  Eigen::VectorXd sigmas = Eigen::VectorXd::Constant(n, sigma);
  Eigen::VectorXd deltas = Eigen::VectorXd::Constant(n, len / n);
  auto res = composite(colors, sigmas, deltas, Eigen::Vector3d::Zero());
  const double expected = 1.0 - std::exp(-sigma * len);
  for (int c = 0; c < 3; ++c)
    CHECK(std::abs(res.color[c] - expected * colors(c, 0)) /
              (expected * colors(c, 0)) <
          1e-3);
}

TEST_CASE("quadrature error decreases as sample count doubles") {
  // Linearly varying density along the ray, constant color: the exact color
  // is c*(1 - exp(-integral sigma)).
  const double len = 4.0;
  auto run = [&](int n) {
    Eigen::Matrix3Xd colors(3, n);
    colors.colwise() = Eigen::Vector3d::Ones();
    Eigen::VectorXd sigmas(n), deltas = Eigen::VectorXd::Constant(n, len / n);
    for (int i = 0; i < n; ++i) {
      const double t = (i + 0.5) * len / n;
      sigmas[i] = 0.05 + 0.4 * t;  // sigma(t) linear
    }
    auto res = composite(colors, sigmas, deltas, Eigen::Vector3d::Zero());
    const double integral = 0.05 * len + 0.4 * len * len / 2;
    return std::abs(res.color[0] - (1.0 - std::exp(-integral)));
  };
  double prev = run(8);
  for (int n : {16, 32, 64, 128}) {
    const double err = run(n);
    CHECK(err < prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("composite backward matches finite differences") {
  const int n = 6;
  Rng rng = make_rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::Matrix3Xd colors(3, n);
  Eigen::VectorXd sigmas(n), deltas(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) colors(c, i) = u(rng);
    sigmas[i] = u(rng);
    deltas[i] = 0.2 + 0.1 * u(rng);
  }
  const Eigen::Vector3d bg(0.3, 0.3, 0.3);
  const Eigen::Vector3d dcolor(0.7, -0.2, 0.4);

  Eigen::Matrix3Xd dcolors;
  Eigen::VectorXd dsigmas;
  composite_backward(colors, sigmas, deltas, bg, dcolor, &dcolors, &dsigmas);

  const double h = 1e-6;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd sp = sigmas, sm = sigmas;
    sp[i] += h;
    sm[i] -= h;
    const double lp = composite(colors, sp, deltas, bg).color.dot(dcolor);
    const double lm = composite(colors, sm, deltas, bg).color.dot(dcolor);
    CHECK(std::abs((lp - lm) / (2 * h) - dsigmas[i]) < 1e-6);
    for (int c = 0; c < 3; ++c) {
      Eigen::Matrix3Xd cp = colors, cm = colors;
      cp(c, i) += h;
      cm(c, i) -= h;
      const double lpc = composite(cp, sigmas, deltas, bg).color.dot(dcolor);
      const double lmc = composite(cm, sigmas, deltas, bg).color.dot(dcolor);
      CHECK(std::abs((lpc - lmc) / (2 * h) - dcolors(c, i)) < 1e-6);
    }
  }
}

TEST_CASE("empty scene renders the background") {
  AnalyticScene scene({});
  Camera cam = Camera::look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 16.0, 16, 16);
  RenderConfig cfg;
  cfg.samples_per_ray = 8;
  cfg.background = Eigen::Vector3d(0.1, 0.5, 0.9);
  const Image img = render_image(scene, cam, cfg);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(img.at(x, y, c) == doctest::Approx(cfg.background[c]).epsilon(1e-12));
}

TEST_CASE("emissive sphere silhouette area matches the projection") {
  AnalyticShape sphere;
  sphere.kind = AnalyticShape::Kind::Sphere;
  sphere.center = {0, 0, 0};
  sphere.half_extent = {1.0, 1.0, 1.0};
  sphere.sigma = 1e4;  // opaque
  sphere.color = {1, 0, 0};
  AnalyticScene scene({sphere});

  const double dist = 4.0, focal = 128.0;
  Camera cam = Camera::look_at({0, 0, dist}, {0, 0, 0}, {0, 1, 0}, focal, 128, 128);
  RenderConfig cfg;
  cfg.samples_per_ray = 256;
  cfg.t_near = 2.0;
  cfg.t_far = 6.0;
  cfg.background = Eigen::Vector3d::Zero();
  const Image img = render_image(scene, cam, cfg);

  int hit = 0;
  for (std::size_t i = 0; i < img.weights.size(); ++i)
    if (img.weights[i] > 0.5) ++hit;
  // the silhouette is a disk of radius focal * R / sqrt(dist^2 - R^2)
  const double r_px = focal * 1.0 / std::sqrt(dist * dist - 1.0);
  const double expected = std::numbers::pi * r_px * r_px;
  CHECK(std::abs(hit - expected) / expected < 0.02);
}

TEST_CASE("deformation: t=0 bypasses the displacement entirely") {
  AnalyticShape sphere;
  sphere.center = {0, 0, 0};
  sphere.half_extent = {0.8, 0.8, 0.8};
  sphere.sigma = 5.0;
  AnalyticScene canonical({sphere});

  // a deformation that would wreck the scene if ever applied at t=0
  DeformationFn bomb = [](const Eigen::MatrixXd& p, double) {
    return Eigen::MatrixXd(100.0 * Eigen::MatrixXd::Ones(p.rows(), p.cols()));
  };
  DeformedSampler dyn(&canonical, bomb);

  Camera cam = Camera::look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 32.0, 32, 32);
  RenderConfig cfg;
  cfg.samples_per_ray = 32;
  cfg.time = 0.0;
  const Image a = render_image(dyn, cam, cfg);
  const Image b = render_image(canonical, cam, cfg);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) CHECK(a.rgb[i] == b.rgb[i]);
}

TEST_CASE("known translation equals the shifted static render") {
  AnalyticShape sphere;
  sphere.center = {0, 0, 0};
  sphere.half_extent = {0.7, 0.7, 0.7};
  sphere.sigma = 8.0;
  sphere.color = {0.9, 0.6, 0.2};
  AnalyticScene canonical({sphere});

  const Eigen::Vector3d shift(0.4, -0.2, 0.1);
  // querying the canonical scene at x + shift shows the object at -shift
  DeformationFn translate = [&](const Eigen::MatrixXd& p, double t) {
    Eigen::MatrixXd d(3, p.cols());
    d.colwise() = Eigen::Vector3d(t * shift);
    return d;
  };
  DeformedSampler dyn(&canonical, translate);

  AnalyticShape moved = sphere;
  moved.center = -shift;
  AnalyticScene shifted({moved});

  Camera cam = Camera::look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 48.0, 48, 48);
  RenderConfig cfg;
  cfg.samples_per_ray = 64;
  cfg.time = 1.0;
  const Image dynamic_frame = render_image(dyn, cam, cfg);
  cfg.time = 0.0;
  const Image static_frame = render_image(shifted, cam, cfg);
  for (std::size_t i = 0; i < dynamic_frame.rgb.size(); ++i)
    CHECK(std::abs(dynamic_frame.rgb[i] - static_frame.rgb[i]) < 1e-3);
}

TEST_CASE("software and hardware backends agree in the noiseless limit") {
  net::NerfNetConfig ncfg;
  ncfg.pos_dim = 15;  // positional m=2 over 3 dims plus raw input
  ncfg.view_dim = 6;  // basic encoding of the direction
  ncfg.width = 24;
  ncfg.rank = 4;
  ncfg.feature_dim = 16;
  ncfg.view_width = 12;
  Rng rng2 = make_rng(6);
  net::FieldNetwork nerf = net::make_nerf_net(ncfg, rng2);

  enc::EncoderConfig praw;
  praw.mode = enc::EncoderMode::Positional;
  praw.input_dim = 3;
  praw.feature_count = 2;
  praw.concat_raw_input = true;
  enc::Encoder pos_enc(praw);
  enc::EncoderConfig vraw;
  vraw.mode = enc::EncoderMode::Basic;
  vraw.input_dim = 3;
  enc::Encoder view_enc(vraw);

  // calibration batch of plausible positions/views
  Eigen::MatrixXd pos = Eigen::MatrixXd::Random(3, 64);
  Eigen::MatrixXd dir = Eigen::MatrixXd::Random(3, 64);
  for (int k = 0; k < 64; ++k) dir.col(k).normalize();
  net::FieldNetwork::ValueMap calib;
  calib["position"] = pos_enc.encode_batch(pos);
  calib["view"] = view_enc.encode_batch(dir);

  deploy::DeployConfig dcfg;
  dcfg.bits.assign(12, 10);
  dcfg.dac_bits = 0;
  dcfg.adc_bits = 0;
  device::NoiseModel quiet = device::NoiseModel::noiseless(7);
  Rng dev = make_rng(8);
  auto hw = deploy::deploy_network(nerf, dcfg, calib, quiet, dev);

  NetSampler sw_sampler(&hw.reference_net(), &pos_enc, &view_enc);
  HwNetSampler hw_sampler(&hw, &pos_enc, &view_enc, 99);

  Camera cam = Camera::look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 8.0, 8, 8);
  RenderConfig cfg;
  cfg.samples_per_ray = 16;
  const Image a = render_image(sw_sampler, cam, cfg);
  const Image b = render_image(hw_sampler, cam, cfg);
  for (std::size_t i = 0; i < a.rgb.size(); ++i)
    CHECK(std::abs(a.rgb[i] - b.rgb[i]) < 1e-4);
}

TEST_SUITE_END();
