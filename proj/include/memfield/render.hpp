#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "memfield/deploy.hpp"
#include "memfield/net.hpp"

namespace memfield::render {

struct Camera {
  Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();  // camera-to-world
  double focal = 64.0;  // pixels
  double cx = 32.0, cy = 32.0;
  int width = 64, height = 64;

  void validate() const;
  /// Camera at `eye` looking at `target` (OpenGL convention: -z forward,
  /// y up in the camera frame), principal point at the image center.
  static Camera look_at(const Eigen::Vector3d& eye,
                        const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double focal, int width,
                        int height);
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = -Eigen::Vector3d::UnitZ();  // unit norm
  double t_near = 2.0, t_far = 6.0;
};

struct RenderConfig {
  int samples_per_ray = 64;
  bool stratified = false;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();  // white
  double time = 0.0;
  double t_near = 2.0, t_far = 6.0;
  std::uint64_t seed = 1;
};

/// One ray through the center of the given pixel.
Ray pixel_ray(const Camera& cam, int px, int py, double t_near, double t_far);
std::vector<Ray> generate_rays(const Camera& cam,
                               std::span<const std::pair<int, int>> pixels,
                               double t_near, double t_far);

/// N strictly increasing sample positions: segment midpoints, or one uniform
/// draw per segment when stratified. deltas[i] = t[i+1]-t[i], with the last
/// interval closed by t_far.
void sample_along_ray(const Ray& ray, int n, bool stratified, Rng& rng,
                      std::vector<double>* ts, std::vector<double>* deltas);

struct CompositeResult {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double weight = 0.0;  // accumulated alpha, 1 - residual transmittance
};

/// Discrete quadrature sum_i T_i (1 - exp(-sigma_i delta_i)) c_i with the
/// residual transmittance blended against the background. Optional
/// per-sample weights out for diagnostics and tests.
CompositeResult composite(const Eigen::Matrix3Xd& colors,
                          const Eigen::VectorXd& sigmas,
                          const Eigen::VectorXd& deltas,
                          const Eigen::Vector3d& background,
                          std::vector<double>* sample_weights = nullptr);

/// d(color)/d(colors, sigmas) contracted with dL/d(color).
void composite_backward(const Eigen::Matrix3Xd& colors,
                        const Eigen::VectorXd& sigmas,
                        const Eigen::VectorXd& deltas,
                        const Eigen::Vector3d& background,
                        const Eigen::Vector3d& dcolor,
                        Eigen::Matrix3Xd* dcolors, Eigen::VectorXd* dsigmas);

/// Radiance field interface: batched position/direction queries at a time.
class FieldSampler {
 public:
  virtual ~FieldSampler() = default;
  virtual void query(const Eigen::MatrixXd& positions,
                     const Eigen::MatrixXd& directions, double time,
                     Eigen::Matrix3Xd* colors,
                     Eigen::VectorXd* sigmas) const = 0;
};

/// Emissive constant-density shapes, optionally translating over time.
struct AnalyticShape {
  enum class Kind { Sphere, Box } kind = Kind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Ones();  // radius in x for spheres
  Eigen::Vector3d color = Eigen::Vector3d::Ones();
  double sigma = 10.0;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // center offset per unit time
};

class AnalyticScene : public FieldSampler {
 public:
  explicit AnalyticScene(std::vector<AnalyticShape> shapes)
      : shapes_(std::move(shapes)) {}
  void query(const Eigen::MatrixXd& positions, const Eigen::MatrixXd& directions,
             double time, Eigen::Matrix3Xd* colors,
             Eigen::VectorXd* sigmas) const override;
  const std::vector<AnalyticShape>& shapes() const { return shapes_; }

 private:
  std::vector<AnalyticShape> shapes_;
};

/// Software radiance net: encoders feed the "position"/"view" input groups,
/// heads "sigma" and "color" come back.
class NetSampler : public FieldSampler {
 public:
  NetSampler(const net::FieldNetwork* network, const enc::Encoder* pos_encoder,
             const enc::Encoder* view_encoder)
      : net_(network), pos_enc_(pos_encoder), view_enc_(view_encoder) {}
  void query(const Eigen::MatrixXd& positions, const Eigen::MatrixXd& directions,
             double time, Eigen::Matrix3Xd* colors,
             Eigen::VectorXd* sigmas) const override;

 private:
  const net::FieldNetwork* net_;
  const enc::Encoder* pos_enc_;
  const enc::Encoder* view_enc_;
};

/// Hardware-backed radiance net over a deployed network.
class HwNetSampler : public FieldSampler {
 public:
  HwNetSampler(const deploy::DeployedNetwork* network,
               const enc::Encoder* pos_encoder, const enc::Encoder* view_encoder,
               std::uint64_t read_seed)
      : net_(network), pos_enc_(pos_encoder), view_enc_(view_encoder),
        read_seed_(read_seed) {}
  void query(const Eigen::MatrixXd& positions, const Eigen::MatrixXd& directions,
             double time, Eigen::Matrix3Xd* colors,
             Eigen::VectorXd* sigmas) const override;

 private:
  const deploy::DeployedNetwork* net_;
  const enc::Encoder* pos_enc_;
  const enc::Encoder* view_enc_;
  std::uint64_t read_seed_;
};

using DeformationFn =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& positions, double time)>;

/// Dynamic-scene composition: the canonical field queried at x + delta(x, t).
/// At t == 0 the displacement is pinned to zero and the canonical sampler is
/// invoked on the original positions untouched.
class DeformedSampler : public FieldSampler {
 public:
  DeformedSampler(const FieldSampler* canonical, DeformationFn deformation)
      : canonical_(canonical), deformation_(std::move(deformation)) {}
  void query(const Eigen::MatrixXd& positions, const Eigen::MatrixXd& directions,
             double time, Eigen::Matrix3Xd* colors,
             Eigen::VectorXd* sigmas) const override;

 private:
  const FieldSampler* canonical_;
  DeformationFn deformation_;
};

/// Deformation function backed by a displacement net and its (x, t) encoder.
DeformationFn make_net_deformation(const net::FieldNetwork* deform_net,
                                   const enc::Encoder* xt_encoder);

struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;      // row-major, 3 channels
  std::vector<double> weights;  // per pixel accumulated alpha

  double& at(int x, int y, int c) {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  double at(int x, int y, int c) const {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  Eigen::MatrixXd channel(int c) const;
  Eigen::MatrixXd luminance() const;  // channel mean
};

/// Renders the full frame; per-ray RNG substreams are derived from
/// (seed, pixel index), so the result is independent of chunking.
Image render_image(const FieldSampler& field, const Camera& cam,
                   const RenderConfig& cfg);

}  // namespace memfield::render
