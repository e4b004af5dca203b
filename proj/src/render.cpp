#include "memfield/render.hpp"

#include <cmath>

namespace memfield::render {

void Camera::validate() const {
  if (width < 1 || height < 1) throw ConfigError("camera resolution must be >= 1x1");
  const Eigen::Matrix3d r = pose.topLeftCorner<3, 3>();
  if (((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >
      1e-6)
    throw ConfigError("camera rotation block is not orthonormal");
  if (focal <= 0) throw ConfigError("focal length must be positive");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double focal, int width,
                       int height) {
  Camera cam;
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d cam_up = right.cross(forward);
  cam.pose.setIdentity();
  cam.pose.block<3, 1>(0, 0) = right;
  cam.pose.block<3, 1>(0, 1) = cam_up;
  cam.pose.block<3, 1>(0, 2) = -forward;  // camera looks along -z
  cam.pose.block<3, 1>(0, 3) = eye;
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.validate();
  return cam;
}

Ray pixel_ray(const Camera& cam, int px, int py, double t_near, double t_far) {
  if (px < 0 || py < 0 || px >= cam.width || py >= cam.height)
    throw ConfigError("pixel outside the camera resolution");
  if (!(t_near < t_far)) throw ConfigError("ray bounds require t_near < t_far");
  const double x = (px + 0.5 - cam.cx) / cam.focal;
  const double y = -(py + 0.5 - cam.cy) / cam.focal;
  Eigen::Vector3d dir_cam(x, y, -1.0);
  dir_cam.normalize();
  Ray ray;
  ray.origin = cam.pose.block<3, 1>(0, 3);
  ray.dir = (cam.pose.topLeftCorner<3, 3>() * dir_cam).normalized();
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

std::vector<Ray> generate_rays(const Camera& cam,
                               std::span<const std::pair<int, int>> pixels,
                               double t_near, double t_far) {
  cam.validate();
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [px, py] : pixels)
    rays.push_back(pixel_ray(cam, px, py, t_near, t_far));
  return rays;
}

void sample_along_ray(const Ray& ray, int n, bool stratified, Rng& rng,
                      std::vector<double>* ts, std::vector<double>* deltas) {
  if (n < 1) throw ConfigError("need at least one sample per ray");
  ts->resize(static_cast<std::size_t>(n));
  deltas->resize(static_cast<std::size_t>(n));
  const double span = ray.t_far - ray.t_near;
  const double seg = span / n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double offset = stratified ? u(rng) : 0.5;
    (*ts)[static_cast<std::size_t>(i)] = ray.t_near + (i + offset) * seg;
  }
  for (int i = 0; i + 1 < n; ++i)
    (*deltas)[static_cast<std::size_t>(i)] =
        (*ts)[static_cast<std::size_t>(i) + 1] - (*ts)[static_cast<std::size_t>(i)];
  (*deltas)[static_cast<std::size_t>(n) - 1] =
      ray.t_far - (*ts)[static_cast<std::size_t>(n) - 1];
}

CompositeResult composite(const Eigen::Matrix3Xd& colors,
                          const Eigen::VectorXd& sigmas,
                          const Eigen::VectorXd& deltas,
                          const Eigen::Vector3d& background,
                          std::vector<double>* sample_weights) {
  const Eigen::Index n = sigmas.size();
  if (colors.cols() != n || deltas.size() != n)
    throw ConfigError("composite inputs must have equal lengths");
  if (n > 0 && sigmas.minCoeff() < 0)
    throw ConfigError("negative density in composite");
  if (n > 0 && deltas.minCoeff() <= 0)
    throw ConfigError("sample intervals must be positive");

  if (sample_weights) sample_weights->assign(static_cast<std::size_t>(n), 0.0);
  CompositeResult out;
  double log_t = 0.0;  // log transmittance
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t_i = std::exp(log_t);
    const double alpha = 1.0 - std::exp(-sigmas[i] * deltas[i]);
    const double w = t_i * alpha;
    out.color += w * colors.col(i);
    out.weight += w;
    if (sample_weights) (*sample_weights)[static_cast<std::size_t>(i)] = w;
    log_t -= sigmas[i] * deltas[i];
  }
  out.color += std::exp(log_t) * background;
  return out;
}

void composite_backward(const Eigen::Matrix3Xd& colors,
                        const Eigen::VectorXd& sigmas,
                        const Eigen::VectorXd& deltas,
                        const Eigen::Vector3d& background,
                        const Eigen::Vector3d& dcolor,
                        Eigen::Matrix3Xd* dcolors, Eigen::VectorXd* dsigmas) {
  const Eigen::Index n = sigmas.size();
  dcolors->resize(3, n);
  dsigmas->resize(n);

  // forward transmittances
  Eigen::VectorXd t(n + 1);
  t[0] = 1.0;
  for (Eigen::Index i = 0; i < n; ++i)
    t[i + 1] = t[i] * std::exp(-sigmas[i] * deltas[i]);

  // suffix[k] = sum_{i>k} T_i alpha_i (c_i . dcolor) + T_N (bg . dcolor)
  Eigen::VectorXd term(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double alpha = 1.0 - std::exp(-sigmas[i] * deltas[i]);
    term[i] = t[i] * alpha * colors.col(i).dot(dcolor);
    dcolors->col(i) = t[i] * alpha * dcolor;
  }
  double suffix = t[n] * background.dot(dcolor);
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const double own =
        t[k] * std::exp(-sigmas[k] * deltas[k]) * colors.col(k).dot(dcolor);
    (*dsigmas)[k] = deltas[k] * (own - suffix);
    suffix += term[k];
  }
}

void AnalyticScene::query(const Eigen::MatrixXd& positions,
                          const Eigen::MatrixXd& directions, double time,
                          Eigen::Matrix3Xd* colors,
                          Eigen::VectorXd* sigmas) const {
  (void)directions;
  const Eigen::Index n = positions.cols();
  colors->setZero(3, n);
  sigmas->setZero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Vector3d p = positions.col(k);
    double total = 0.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& s : shapes_) {
      const Eigen::Vector3d center = s.center + time * s.velocity;
      bool inside = false;
      if (s.kind == AnalyticShape::Kind::Sphere) {
        inside = (p - center).norm() <= s.half_extent[0];
      } else {
        inside = ((p - center).cwiseAbs().array() <= s.half_extent.array()).all();
      }
      if (inside) {
        total += s.sigma;
        c += s.sigma * s.color;
      }
    }
    (*sigmas)[k] = total;
    colors->col(k) = total > 0 ? Eigen::Vector3d(c / total) : Eigen::Vector3d::Zero();
  }
}

void NetSampler::query(const Eigen::MatrixXd& positions,
                       const Eigen::MatrixXd& directions, double time,
                       Eigen::Matrix3Xd* colors, Eigen::VectorXd* sigmas) const {
  (void)time;
  net::FieldNetwork::ValueMap in;
  in["position"] = pos_enc_ ? pos_enc_->encode_batch(positions) : positions;
  if (net_->inputs().count("view"))
    in["view"] = view_enc_ ? view_enc_->encode_batch(directions) : directions;
  auto out = net_->forward(in);
  *colors = out.at("color");
  *sigmas = out.at("sigma").row(0).transpose();
}

void HwNetSampler::query(const Eigen::MatrixXd& positions,
                         const Eigen::MatrixXd& directions, double time,
                         Eigen::Matrix3Xd* colors,
                         Eigen::VectorXd* sigmas) const {
  (void)time;
  net::FieldNetwork::ValueMap in;
  in["position"] = pos_enc_ ? pos_enc_->encode_batch(positions) : positions;
  if (net_->reference_net().inputs().count("view"))
    in["view"] = view_enc_ ? view_enc_->encode_batch(directions) : directions;
  Rng rng = make_rng(read_seed_);
  auto out = net_->hw_forward(in, rng);
  *colors = out.at("color");
  *sigmas = out.at("sigma").row(0).transpose();
}

void DeformedSampler::query(const Eigen::MatrixXd& positions,
                            const Eigen::MatrixXd& directions, double time,
                            Eigen::Matrix3Xd* colors,
                            Eigen::VectorXd* sigmas) const {
  if (time == 0.0) {  // initial conditions fix the scene
    canonical_->query(positions, directions, 0.0, colors, sigmas);
    return;
  }
  const Eigen::MatrixXd delta = deformation_(positions, time);
  canonical_->query(positions + delta, directions, 0.0, colors, sigmas);
}

DeformationFn make_net_deformation(const net::FieldNetwork* deform_net,
                                   const enc::Encoder* xt_encoder) {
  return [deform_net, xt_encoder](const Eigen::MatrixXd& positions, double time) {
    Eigen::MatrixXd xt(4, positions.cols());
    xt.topRows(3) = positions;
    xt.row(3).setConstant(time);
    net::FieldNetwork::ValueMap in;
    in["features"] = xt_encoder ? xt_encoder->encode_batch(xt) : xt;
    return Eigen::MatrixXd(deform_net->forward(in).at("delta"));
  };
}

Eigen::MatrixXd Image::channel(int c) const {
  Eigen::MatrixXd m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(y, x) = at(x, y, c);
  return m;
}

Eigen::MatrixXd Image::luminance() const {
  return (channel(0) + channel(1) + channel(2)) / 3.0;
}

Image render_image(const FieldSampler& field, const Camera& cam,
                   const RenderConfig& cfg) {
  cam.validate();
  if (cfg.samples_per_ray < 1) throw ConfigError("samples_per_ray must be >= 1");

  Image img;
  img.width = cam.width;
  img.height = cam.height;
  img.rgb.assign(static_cast<std::size_t>(cam.width) * cam.height * 3, 0.0);
  img.weights.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);

  const int n = cfg.samples_per_ray;
  const int chunk = std::max(1, 4096 / n);  // rays per field query

  std::vector<double> ts, deltas;
  std::vector<Ray> rays(static_cast<std::size_t>(chunk));
  Eigen::MatrixXd positions(3, chunk * n), dirs(3, chunk * n);
  Eigen::VectorXd all_deltas(chunk * n);

  const int total = cam.width * cam.height;
  for (int base = 0; base < total; base += chunk) {
    const int count = std::min(chunk, total - base);
    for (int k = 0; k < count; ++k) {
      const int pixel = base + k;
      const int px = pixel % cam.width;
      const int py = pixel / cam.width;
      const Ray ray = pixel_ray(cam, px, py, cfg.t_near, cfg.t_far);
      rays[static_cast<std::size_t>(k)] = ray;
      Rng ray_rng = make_rng(cfg.seed, static_cast<std::uint64_t>(pixel));
      sample_along_ray(ray, n, cfg.stratified, ray_rng, &ts, &deltas);
      for (int i = 0; i < n; ++i) {
        positions.col(k * n + i) = ray.origin + ts[static_cast<std::size_t>(i)] * ray.dir;
        dirs.col(k * n + i) = ray.dir;
        all_deltas[k * n + i] = deltas[static_cast<std::size_t>(i)];
      }
    }

    Eigen::Matrix3Xd colors;
    Eigen::VectorXd sigmas;
    field.query(positions.leftCols(count * n), dirs.leftCols(count * n),
                cfg.time, &colors, &sigmas);

    for (int k = 0; k < count; ++k) {
      const auto res = composite(colors.middleCols(k * n, n),
                                 sigmas.segment(k * n, n),
                                 all_deltas.segment(k * n, n), cfg.background);
      const int pixel = base + k;
      const int px = pixel % cam.width;
      const int py = pixel / cam.width;
      for (int c = 0; c < 3; ++c) img.at(px, py, c) = res.color[c];
      img.weights[static_cast<std::size_t>(pixel)] = res.weight;
    }
  }
  return img;
}

}  // namespace memfield::render
