#include "memfield/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "json.hpp"
#include "memfield/hapo.hpp"
#include "memfield/metrics.hpp"
#include "memfield/quant.hpp"

namespace memfield::pipeline {

namespace fs = std::filesystem;
using io::ExperimentManifest;

namespace {

std::string hash_comment(const ExperimentManifest& m) {
  return "manifest=" + m.hash();
}

net::Activation activation_from(const std::string& name) {
  if (name == "sine") return net::Activation::Sine;
  if (name == "relu") return net::Activation::ReLU;
  throw ConfigError("unknown activation: " + name);
}

void image_to_dataset(const Eigen::MatrixXd& img, Eigen::MatrixXd* coords,
                      Eigen::MatrixXd* values) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  coords->resize(2, static_cast<Eigen::Index>(w) * h);
  values->resize(1, static_cast<Eigen::Index>(w) * h);
  Eigen::Index k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      (*coords)(0, k) = w > 1 ? static_cast<double>(x) / (w - 1) : 0.5;
      (*coords)(1, k) = h > 1 ? static_cast<double>(y) / (h - 1) : 0.5;
      (*values)(0, k) = img(y, x);
      ++k;
    }
}

Eigen::MatrixXd grid_coords(int width, int height, double z) {
  const bool volume = z >= 0.0;
  Eigen::MatrixXd coords(volume ? 3 : 2, static_cast<Eigen::Index>(width) * height);
  Eigen::Index k = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      coords(0, k) = width > 1 ? static_cast<double>(x) / (width - 1) : 0.5;
      coords(1, k) = height > 1 ? static_cast<double>(y) / (height - 1) : 0.5;
      if (volume) coords(2, k) = z;
      ++k;
    }
  return coords;
}

Eigen::MatrixXd vector_to_image(const Eigen::MatrixXd& row, int width, int height) {
  Eigen::MatrixXd img(height, width);
  Eigen::Index k = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) img(y, x) = row(0, k++);
  return img;
}

Eigen::MatrixXd load_task_image(const ExperimentManifest& m) {
  if (m.dataset.rfind("procedural:", 0) == 0)
    return io::procedural_test_image(m.image.width, m.image.height);
  if (!fs::exists(m.dataset)) throw DataError("missing dataset: " + m.dataset);
  return io::read_pgm16(m.dataset);
}

io::VolumeDataset load_task_volume(const ExperimentManifest& m) {
  if (m.dataset.rfind("procedural:", 0) == 0)
    return io::make_phantom(m.volume.slices, m.volume.width, m.volume.height);
  return io::ingest_volume(m.dataset);
}

Eigen::MatrixXd calibration_subset(const Eigen::MatrixXd& features, int max_cols) {
  if (features.cols() <= max_cols) return features;
  Eigen::MatrixXd out(features.rows(), max_cols);
  const Eigen::Index stride = features.cols() / max_cols;
  for (int k = 0; k < max_cols; ++k) out.col(k) = features.col(k * stride);
  return out;
}

deploy::DeployConfig deploy_config_from(const ExperimentManifest& m,
                                        std::size_t n_layers) {
  deploy::DeployConfig cfg;
  cfg.bits = m.deploy.bits;
  if (cfg.bits.size() == 1 && n_layers > 1)
    cfg.bits.assign(n_layers, m.deploy.bits[0]);  // uniform shorthand
  cfg.s = m.deploy.s;
  cfg.method = m.deploy.method == "ptq" ? deploy::QuantMethod::Ptq
                                        : deploy::QuantMethod::Haq;
  cfg.dac_bits = m.deploy.dac_bits;
  cfg.adc_bits = m.deploy.adc_bits;
  cfg.max_cells = m.deploy.max_cells;
  return cfg;
}

void save_loss_trace(const fs::path& path, const std::vector<double>& trace,
                     const std::string& hash) {
  std::string out = "# manifest=" + hash + "\nstep,loss\n";
  char buf[48];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, trace[i]);
    out += buf;
  }
  atomic_write(path.string(), out);
}

void save_checkpoint_with_sidecar(const net::FieldNetwork& network,
                                  const fs::path& path, const std::string& hash) {
  net::save_checkpoint(network, path.string());
  nlohmann::json side;
  side["manifest"] = hash;
  atomic_write(path.string() + ".json", side.dump(2) + "\n");
}

}  // namespace

std::shared_ptr<enc::Encoder> make_input_encoder(const ExperimentManifest& m,
                                                 int input_dim) {
  const enc::EncoderConfig cfg = m.encoder.to_config(input_dim);
  if (cfg.mode != enc::EncoderMode::Gaussian)
    return std::make_shared<enc::Encoder>(cfg);
  Rng form_rng = make_rng(m.noise.seed, 50);
  auto formed = device::form_random_matrix(input_dim, cfg.feature_count,
                                           m.noise, form_rng);
  return std::make_shared<enc::Encoder>(cfg, formed, m.noise);
}

ScalarFit fit_scalar_field(const ExperimentManifest& m,
                           const Eigen::MatrixXd& coords,
                           const Eigen::MatrixXd& values) {
  ScalarFit fit;
  fit.encoder = make_input_encoder(m, static_cast<int>(coords.rows()));

  Rng net_rng = make_rng(m.seed, 60);
  fit.network = net::make_scalar_field_net(
      fit.encoder->output_dim(), m.network.width, m.network.rank,
      activation_from(m.network.activation), net::Activation::Identity, net_rng);
  for (auto& n : fit.network.nodes())
    if (n.kind == net::FieldNetwork::Node::Kind::Affine)
      n.layer.sine_omega = m.network.omega0;

  net::Dataset data;
  data.inputs["features"] = fit.encoder->encode_batch(coords);
  data.targets["value"] = values;
  fit.loss_trace = net::train(fit.network, data, m.train_config()).loss_trace;
  return fit;
}

Eigen::MatrixXd eval_scalar_image(const net::FieldNetwork& network,
                                  const enc::Encoder& encoder, int width,
                                  int height, double z) {
  const Eigen::MatrixXd coords = grid_coords(width, height, z);
  const auto out = network.forward({{"features", encoder.encode_batch(coords)}});
  return vector_to_image(out.at("value"), width, height);
}

Eigen::MatrixXd eval_scalar_image_hw(const deploy::DeployedNetwork& network,
                                     const enc::Encoder& encoder, int width,
                                     int height, Rng& rng, double z) {
  const Eigen::MatrixXd coords = grid_coords(width, height, z);
  const auto out =
      network.hw_forward({{"features", encoder.encode_batch(coords)}}, rng);
  return vector_to_image(out.at("value"), width, height);
}

namespace {

void run_image_fit(const ExperimentManifest& m) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  const Eigen::MatrixXd reference = load_task_image(m);
  Eigen::MatrixXd coords, values;
  image_to_dataset(reference, &coords, &values);

  ScalarFit fit = fit_scalar_field(m, coords, values);
  save_loss_trace(out / "loss.csv", fit.loss_trace, h);
  save_checkpoint_with_sidecar(fit.network, out / "model.nfw", h);

  const int w = static_cast<int>(reference.cols());
  const int ht = static_cast<int>(reference.rows());
  const Eigen::MatrixXd recon = eval_scalar_image(fit.network, *fit.encoder, w, ht);
  io::write_pgm16((out / "reference.pgm").string(), reference, hash_comment(m));
  io::write_pgm16((out / "recon_software.pgm").string(), recon, hash_comment(m));

  std::vector<metrics::MetricsRow> rows;
  rows.push_back({m.task, "software", metrics::mse(reference, recon),
                  metrics::psnr(reference, recon, 1.0),
                  metrics::ssim(reference, recon, 1.0), h});

  if (!m.deploy.bits.empty()) {
    const Eigen::MatrixXd features = fit.encoder->encode_batch(coords);
    Rng dev_rng = make_rng(m.seed, 70);
    auto hw = deploy::deploy_network(
        fit.network, deploy_config_from(m, 3),
        {{"features", calibration_subset(features, 64)}}, m.noise, dev_rng);
    Rng read_rng = make_rng(m.seed, 71);
    const Eigen::MatrixXd recon_hw =
        eval_scalar_image_hw(hw, *fit.encoder, w, ht, read_rng);
    io::write_pgm16((out / ("recon_" + m.deploy.method + ".pgm")).string(),
                    recon_hw, hash_comment(m));
    rows.push_back({m.task, "hw-" + m.deploy.method,
                    metrics::mse(reference, recon_hw),
                    metrics::psnr(reference, recon_hw, 1.0),
                    metrics::ssim(reference, recon_hw, 1.0), h});
  }
  metrics::write_metrics_csv((out / "metrics.csv").string(), rows, h);
}

void run_ct(const ExperimentManifest& m, bool sparse) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  const io::VolumeDataset volume = load_task_volume(m);
  std::vector<metrics::MetricsRow> rows;

  auto eval_all_slices = [&](const ScalarFit& fit, const std::string& tag,
                             bool write_slices) {
    double mse_acc = 0.0;
    for (int z = 0; z < volume.slices; ++z) {
      const double zc =
          volume.slices > 1 ? static_cast<double>(z) / (volume.slices - 1) : 0.5;
      const Eigen::MatrixXd recon = eval_scalar_image(
          fit.network, *fit.encoder, volume.width, volume.height, zc);
      const auto& ref = volume.data[static_cast<std::size_t>(z)];
      const double slice_mse = metrics::mse(ref, recon);
      mse_acc += slice_mse;
      rows.push_back({m.task, tag + "/slice" + std::to_string(z), slice_mse,
                      metrics::psnr(ref, recon, 1.0),
                      metrics::ssim(ref, recon, 1.0), h});
      if (write_slices) {
        char name[48];
        std::snprintf(name, sizeof(name), "recon_%s_%03d.pgm", tag.c_str(), z);
        io::write_pgm16((out / name).string(), recon, hash_comment(m));
      }
    }
    const double mean_mse = mse_acc / volume.slices;
    rows.push_back({m.task, tag + "/mean", mean_mse,
                    metrics::psnr_from_mse(mean_mse, 1.0), 0.0, h});
    return metrics::psnr_from_mse(mean_mse, 1.0);
  };

  if (sparse && !m.volume.sweep.empty()) {
    std::string curve = "# manifest=" + h + "\ntrain_slices,psnr_db\n";
    for (int count : m.volume.sweep) {
      const auto subset = io::evenly_spaced_slices(volume.slices, count);
      Eigen::MatrixXd coords, values;
      volume.to_training_set(subset, &coords, &values);
      ScalarFit fit = fit_scalar_field(m, coords, values);
      const double psnr =
          eval_all_slices(fit, "train" + std::to_string(count), false);
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%d,%.9g\n", count, psnr);
      curve += buf;
    }
    atomic_write((out / "sparse_curve.csv").string(), curve);
  } else {
    const int train_count =
        sparse ? m.volume.train_slice_count : volume.slices;
    const auto subset = io::evenly_spaced_slices(volume.slices, train_count);
    Eigen::MatrixXd coords, values;
    volume.to_training_set(subset, &coords, &values);
    ScalarFit fit = fit_scalar_field(m, coords, values);
    save_loss_trace(out / "loss.csv", fit.loss_trace, h);
    save_checkpoint_with_sidecar(fit.network, out / "model.nfw", h);
    eval_all_slices(fit, "software", true);

    if (!m.deploy.bits.empty()) {
      Eigen::MatrixXd features = fit.encoder->encode_batch(coords);
      Rng dev_rng = make_rng(m.seed, 70);
      auto hw = deploy::deploy_network(
          fit.network, deploy_config_from(m, 3),
          {{"features", calibration_subset(features, 64)}}, m.noise, dev_rng);
      Rng read_rng = make_rng(m.seed, 71);
      double mse_acc = 0.0;
      for (int z = 0; z < volume.slices; ++z) {
        const double zc = volume.slices > 1
                              ? static_cast<double>(z) / (volume.slices - 1)
                              : 0.5;
        const Eigen::MatrixXd recon = eval_scalar_image_hw(
            hw, *fit.encoder, volume.width, volume.height, read_rng, zc);
        const auto& ref = volume.data[static_cast<std::size_t>(z)];
        const double slice_mse = metrics::mse(ref, recon);
        mse_acc += slice_mse;
        rows.push_back({m.task, "hw/slice" + std::to_string(z), slice_mse,
                        metrics::psnr(ref, recon, 1.0),
                        metrics::ssim(ref, recon, 1.0), h});
      }
      const double mean_mse = mse_acc / volume.slices;
      rows.push_back({m.task, "hw/mean", mean_mse,
                      metrics::psnr_from_mse(mean_mse, 1.0), 0.0, h});
    }
  }
  metrics::write_metrics_csv((out / "metrics.csv").string(), rows, h);
}

io::SceneSpec scene_spec_from(const ExperimentManifest& m) {
  io::SceneSpec spec;
  spec.n_views = m.scene.n_views;
  spec.width = m.scene.width;
  spec.height = m.scene.height;
  spec.focal = m.scene.focal;
  spec.camera_distance = m.scene.camera_distance;
  spec.samples_per_ray = m.render.samples;
  spec.t_near = m.render.t_near;
  spec.t_far = m.render.t_far;
  spec.background = Eigen::Vector3d(m.render.background[0], m.render.background[1],
                                    m.render.background[2]);
  for (int f = 0; f < m.scene.frames; ++f)
    spec.times.push_back(m.scene.frames > 1
                             ? static_cast<double>(f) / (m.scene.frames - 1)
                             : 0.0);

  render::AnalyticShape ball;
  ball.kind = render::AnalyticShape::Kind::Sphere;
  ball.center = {0.25, 0.1, 0.0};
  ball.half_extent = {0.62, 0.62, 0.62};
  ball.color = {0.85, 0.3, 0.25};
  ball.sigma = 14.0;
  render::AnalyticShape box;
  box.kind = render::AnalyticShape::Kind::Box;
  box.center = {-0.55, -0.3, 0.25};
  box.half_extent = {0.38, 0.3, 0.38};
  box.color = {0.2, 0.5, 0.85};
  box.sigma = 10.0;
  if (!spec.times.empty()) ball.velocity = {-0.5, 0.25, 0.15};
  spec.shapes = {ball, box};
  return spec;
}

}  // namespace

void train_radiance(net::FieldNetwork& nerf, const enc::Encoder& pos_enc,
                    const enc::Encoder& view_enc, const RadianceScene& rs,
                    const net::TrainConfig& cfg, const Eigen::Vector3d& bg) {
  const auto& scene = *rs.scene;
  const int n_views = static_cast<int>(scene.cameras.size());
  const int w = scene.spec.width, ht = scene.spec.height;
  const int n = rs.samples_per_ray;
  const int rays = rs.rays_per_step;
  Rng rng = make_rng(cfg.seed, 80);
  std::uniform_int_distribution<int> pick_view(0, n_views - 1);
  std::uniform_int_distribution<int> pick_px(0, w - 1), pick_py(0, ht - 1);

  net::NetOptimizer optimizer(nerf, cfg);
  std::vector<double> ts, deltas;

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd positions(3, rays * n), dirs(3, rays * n);
    Eigen::VectorXd all_deltas(rays * n);
    Eigen::Matrix3Xd targets(3, rays);
    for (int r = 0; r < rays; ++r) {
      const int view = pick_view(rng);
      const int px = pick_px(rng), py = pick_py(rng);
      const auto ray = render::pixel_ray(scene.cameras[static_cast<std::size_t>(view)], px, py,
                                         scene.spec.t_near, scene.spec.t_far);
      render::sample_along_ray(ray, n, true, rng, &ts, &deltas);
      for (int i = 0; i < n; ++i) {
        positions.col(r * n + i) = ray.origin + ts[static_cast<std::size_t>(i)] * ray.dir;
        dirs.col(r * n + i) = ray.dir;
        all_deltas[r * n + i] = deltas[static_cast<std::size_t>(i)];
      }
      const auto& ref = scene.references[static_cast<std::size_t>(view)];
      targets.col(r) = Eigen::Vector3d(ref.at(px, py, 0), ref.at(px, py, 1),
                                       ref.at(px, py, 2));
    }

    net::FieldNetwork::ValueMap in;
    in["position"] = pos_enc.encode_batch(positions);
    in["view"] = view_enc.encode_batch(dirs);
    net::FieldNetwork::Trace trace;
    auto out = nerf.forward(in, &trace);
    const Eigen::MatrixXd& colors = out.at("color");
    const Eigen::MatrixXd& sigmas = out.at("sigma");

    Eigen::MatrixXd dcolor_all = Eigen::MatrixXd::Zero(3, rays * n);
    Eigen::MatrixXd dsigma_all = Eigen::MatrixXd::Zero(1, rays * n);
    double loss = 0.0;
    for (int r = 0; r < rays; ++r) {
      const Eigen::Matrix3Xd c = colors.middleCols(r * n, n);
      const Eigen::VectorXd s = sigmas.row(0).segment(r * n, n).transpose();
      const Eigen::VectorXd d = all_deltas.segment(r * n, n);
      const auto res = render::composite(c, s, d, bg);
      const Eigen::Vector3d diff = res.color - targets.col(r);
      loss += diff.squaredNorm();
      const Eigen::Vector3d dC = 2.0 * diff / (3.0 * rays);
      Eigen::Matrix3Xd dc;
      Eigen::VectorXd dsig;
      render::composite_backward(c, s, d, bg, dC, &dc, &dsig);
      dcolor_all.middleCols(r * n, n) = dc;
      dsigma_all.row(0).segment(r * n, n) = dsig.transpose();
    }
    loss /= 3.0 * rays;
    if (!std::isfinite(loss))
      throw NumericError("radiance training diverged at step " +
                         std::to_string(step));

    net::FieldNetwork::Gradients grads;
    nerf.backward(in, trace, {{"color", dcolor_all}, {"sigma", dsigma_all}},
                  &grads);
    optimizer.step(grads);
  }
}

namespace {

net::FieldNetwork make_canonical_net(int view_dim, int width, int depth,
                                     std::shared_ptr<const enc::Encoder> pos_enc,
                                     Rng& rng) {
  net::FieldNetwork n;
  const int pos = n.add_input("position", 3);
  int cur = n.add_encoder(pos, pos_enc);
  int in_dim = pos_enc->output_dim();
  for (int d = 0; d < depth; ++d) {
    cur = n.add_layer(cur, net::Layer::dense(in_dim, width, net::Activation::ReLU, rng));
    in_dim = width;
  }
  const int sigma = n.add_layer(cur, net::Layer::dense(width, 1, net::Activation::ReLU, rng));
  n.set_head("sigma", sigma);
  const int view = n.add_input("view", view_dim);
  const int cat = n.add_concat(cur, view);
  const int rgb = n.add_layer(
      cat, net::Layer::dense(width + view_dim, 3, net::Activation::Sigmoid, rng));
  n.set_head("color", rgb);
  return n;
}

}  // namespace

void train_dnerf(net::FieldNetwork& canonical, net::FieldNetwork& deform,
                 const enc::Encoder& xt_enc, const enc::Encoder& view_enc,
                 const RadianceScene& rs, const net::TrainConfig& cfg,
                 const Eigen::Vector3d& bg) {
  const auto& scene = *rs.scene;
  const int n_views = static_cast<int>(scene.cameras.size());
  const int frames = static_cast<int>(scene.spec.times.size());
  if (frames < 1) throw ConfigError("dnerf training needs a dynamic scene");
  const int w = scene.spec.width, ht = scene.spec.height;
  const int n = rs.samples_per_ray;
  const int rays = rs.rays_per_step;
  Rng rng = make_rng(cfg.seed, 81);
  std::uniform_int_distribution<int> pick_view(0, n_views - 1);
  std::uniform_int_distribution<int> pick_frame(0, frames - 1);
  std::uniform_int_distribution<int> pick_px(0, w - 1), pick_py(0, ht - 1);

  net::NetOptimizer can_opt(canonical, cfg);
  net::NetOptimizer def_opt(deform, cfg);
  std::vector<double> ts, deltas;

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd positions(3, rays * n), dirs(3, rays * n);
    Eigen::VectorXd all_deltas(rays * n);
    Eigen::VectorXd times(rays * n);
    Eigen::Matrix3Xd targets(3, rays);
    for (int r = 0; r < rays; ++r) {
      const int view = pick_view(rng);
      const int frame = pick_frame(rng);
      const double t = scene.spec.times[static_cast<std::size_t>(frame)];
      const int px = pick_px(rng), py = pick_py(rng);
      const auto ray = render::pixel_ray(scene.cameras[static_cast<std::size_t>(view)], px, py,
                                         scene.spec.t_near, scene.spec.t_far);
      render::sample_along_ray(ray, n, true, rng, &ts, &deltas);
      for (int i = 0; i < n; ++i) {
        positions.col(r * n + i) = ray.origin + ts[static_cast<std::size_t>(i)] * ray.dir;
        dirs.col(r * n + i) = ray.dir;
        all_deltas[r * n + i] = deltas[static_cast<std::size_t>(i)];
        times[r * n + i] = t;
      }
      const auto& ref = scene.references[static_cast<std::size_t>(view * frames + frame)];
      targets.col(r) = Eigen::Vector3d(ref.at(px, py, 0), ref.at(px, py, 1),
                                       ref.at(px, py, 2));
    }

    // deformation: delta = 0 at t = 0 by construction, no gradient there
    Eigen::MatrixXd xt(4, rays * n);
    xt.topRows(3) = positions;
    xt.row(3) = times.transpose();
    net::FieldNetwork::ValueMap def_in{{"features", xt_enc.encode_batch(xt)}};
    net::FieldNetwork::Trace def_trace;
    Eigen::MatrixXd delta = deform.forward(def_in, &def_trace).at("delta");
    for (Eigen::Index k = 0; k < delta.cols(); ++k)
      if (times[k] == 0.0) delta.col(k).setZero();

    net::FieldNetwork::ValueMap can_in;
    can_in["position"] = positions + delta;
    can_in["view"] = view_enc.encode_batch(dirs);
    net::FieldNetwork::Trace can_trace;
    auto out = canonical.forward(can_in, &can_trace);
    const Eigen::MatrixXd& colors = out.at("color");
    const Eigen::MatrixXd& sigmas = out.at("sigma");

    Eigen::MatrixXd dcolor_all = Eigen::MatrixXd::Zero(3, rays * n);
    Eigen::MatrixXd dsigma_all = Eigen::MatrixXd::Zero(1, rays * n);
    double loss = 0.0;
    for (int r = 0; r < rays; ++r) {
      const Eigen::Matrix3Xd c = colors.middleCols(r * n, n);
      const Eigen::VectorXd s = sigmas.row(0).segment(r * n, n).transpose();
      const Eigen::VectorXd d = all_deltas.segment(r * n, n);
      const auto res = render::composite(c, s, d, bg);
      const Eigen::Vector3d diff = res.color - targets.col(r);
      loss += diff.squaredNorm();
      const Eigen::Vector3d dC = 2.0 * diff / (3.0 * rays);
      Eigen::Matrix3Xd dc;
      Eigen::VectorXd dsig;
      render::composite_backward(c, s, d, bg, dC, &dc, &dsig);
      dcolor_all.middleCols(r * n, n) = dc;
      dsigma_all.row(0).segment(r * n, n) = dsig.transpose();
    }
    loss /= 3.0 * rays;
    if (!std::isfinite(loss))
      throw NumericError("dnerf training diverged at step " +
                         std::to_string(step));

    net::FieldNetwork::Gradients can_grads;
    auto input_grads = canonical.backward(
        can_in, can_trace, {{"color", dcolor_all}, {"sigma", dsigma_all}},
        &can_grads);
    can_opt.step(can_grads);

    Eigen::MatrixXd delta_grad = input_grads.at("position");
    for (Eigen::Index k = 0; k < delta_grad.cols(); ++k)
      if (times[k] == 0.0) delta_grad.col(k).setZero();
    net::FieldNetwork::Gradients def_grads;
    deform.backward(def_in, def_trace, {{"delta", delta_grad}}, &def_grads);
    def_opt.step(def_grads);
  }
}

namespace {

void run_nerf(const ExperimentManifest& m) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  io::SceneSpec spec = scene_spec_from(m);
  spec.times.clear();  // static task
  const io::SyntheticScene scene = io::make_synthetic_scene(spec);
  io::save_scene((out / "scene").string(), scene, hash_comment(m));

  auto pos_enc = make_input_encoder(m, 3);
  enc::Encoder view_enc(m.view_encoder.to_config(3));

  net::NerfNetConfig ncfg;
  ncfg.pos_dim = pos_enc->output_dim();
  ncfg.view_dim = view_enc.output_dim();
  ncfg.width = m.network.width;
  ncfg.rank = m.network.rank;
  ncfg.feature_dim = m.network.feature_dim;
  ncfg.view_width = m.network.view_width;
  ncfg.depth = m.network.depth;
  if (ncfg.skip_layer > ncfg.depth)
    ncfg.skip_layer = std::max(2, ncfg.depth / 2 + 1);
  Rng net_rng = make_rng(m.seed, 61);
  net::FieldNetwork nerf = net::make_nerf_net(ncfg, net_rng);

  RadianceScene rs;
  rs.scene = &scene;
  rs.samples_per_ray = std::min(m.render.samples, 32);
  rs.rays_per_step = std::max(64, std::min(m.train.batch, 512));
  train_radiance(nerf, *pos_enc, view_enc, rs, m.train_config(), spec.background);
  save_checkpoint_with_sidecar(nerf, out / "model.nfw", h);

  render::NetSampler sampler(&nerf, pos_enc.get(), &view_enc);
  render::RenderConfig rcfg;
  rcfg.samples_per_ray = m.render.samples;
  rcfg.t_near = spec.t_near;
  rcfg.t_far = spec.t_far;
  rcfg.background = spec.background;

  std::vector<metrics::MetricsRow> rows;
  for (int v = 0; v < spec.n_views; ++v) {
    const auto img = render::render_image(sampler, scene.cameras[static_cast<std::size_t>(v)], rcfg);
    const auto& ref = scene.references[static_cast<std::size_t>(v)];
    rows.push_back({m.task, "view" + std::to_string(v), metrics::mse(ref, img),
                    metrics::psnr(ref, img, 1.0), metrics::ssim(ref, img, 1.0),
                    h});
    if (v == 0)
      io::write_ppm16((out / "render_view0.ppm").string(), img, hash_comment(m));
  }
  metrics::write_metrics_csv((out / "metrics.csv").string(), rows, h);
}

void run_dnerf(const ExperimentManifest& m) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  io::SceneSpec spec = scene_spec_from(m);
  if (spec.times.empty()) spec.times = {0.0, 0.5, 1.0};
  const io::SyntheticScene scene = io::make_synthetic_scene(spec);
  io::save_scene((out / "scene").string(), scene, hash_comment(m));

  // canonical position encoder sits inside the network so displacement
  // gradients can flow through it
  auto pos_cfg = m.encoder.to_config(3);
  std::shared_ptr<enc::Encoder> pos_enc;
  if (pos_cfg.mode == enc::EncoderMode::Gaussian) {
    Rng form_rng = make_rng(m.noise.seed, 50);
    auto formed =
        device::form_random_matrix(3, pos_cfg.feature_count, m.noise, form_rng);
    pos_enc = std::make_shared<enc::Encoder>(pos_cfg, formed, m.noise);
  } else {
    pos_enc = std::make_shared<enc::Encoder>(pos_cfg);
  }
  enc::Encoder view_enc(m.view_encoder.to_config(3));

  // (x, t) encoder for the deformation field
  enc::EncoderConfig xt_cfg;
  xt_cfg.mode = enc::EncoderMode::Positional;
  xt_cfg.input_dim = 4;
  xt_cfg.feature_count = 4;
  xt_cfg.concat_raw_input = true;
  enc::Encoder xt_enc(xt_cfg);

  Rng net_rng = make_rng(m.seed, 62);
  net::FieldNetwork canonical =
      make_canonical_net(view_enc.output_dim(), m.network.width, 4, pos_enc, net_rng);
  net::FieldNetwork deform =
      net::make_deformation_net(xt_enc.output_dim(), m.network.width, net_rng);

  RadianceScene rs;
  rs.scene = &scene;
  rs.samples_per_ray = std::min(m.render.samples, 32);
  rs.rays_per_step = std::max(64, std::min(m.train.batch, 512));
  train_dnerf(canonical, deform, xt_enc, view_enc, rs, m.train_config(),
              spec.background);
  save_checkpoint_with_sidecar(canonical, out / "canonical.nfw", h);
  save_checkpoint_with_sidecar(deform, out / "deform.nfw", h);

  render::NetSampler canonical_sampler(&canonical, nullptr, &view_enc);
  render::DeformedSampler dyn(&canonical_sampler,
                              render::make_net_deformation(&deform, &xt_enc));

  render::RenderConfig rcfg;
  rcfg.samples_per_ray = m.render.samples;
  rcfg.t_near = spec.t_near;
  rcfg.t_far = spec.t_far;
  rcfg.background = spec.background;

  const int frames = static_cast<int>(spec.times.size());
  std::vector<metrics::MetricsRow> rows;
  for (int v = 0; v < spec.n_views; ++v)
    for (int f = 0; f < frames; ++f) {
      rcfg.time = spec.times[static_cast<std::size_t>(f)];
      const auto img =
          render::render_image(dyn, scene.cameras[static_cast<std::size_t>(v)], rcfg);
      const auto& ref = scene.references[static_cast<std::size_t>(v * frames + f)];
      char id[32];
      std::snprintf(id, sizeof(id), "view%d/frame%d", v, f);
      rows.push_back({m.task, id, metrics::mse(ref, img),
                      metrics::psnr(ref, img, 1.0), metrics::ssim(ref, img, 1.0),
                      h});
      if (v == 0 && f + 1 == frames)
        io::write_ppm16((out / "render_last_frame.ppm").string(), img,
                        hash_comment(m));
    }
  metrics::write_metrics_csv((out / "metrics.csv").string(), rows, h);
}

void run_matmul_bench(const ExperimentManifest& m) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  quant::MatmulBenchConfig cfg;
  cfg.length = m.bench_length;
  cfg.outputs = m.bench_outputs;
  cfg.weight_bits = m.bench_weight_bits;
  cfg.input_bits = m.bench_input_bits;
  cfg.s = m.deploy.s;
  cfg.seeds = m.bench_seeds;
  cfg.base_seed = m.seed;
  cfg.noise = m.noise;
  const auto res = quant::run_matmul_bench(cfg);

  std::string csv = "# manifest=" + h + "\nseed,haq_rmse,ptq_rmse\n";
  char buf[96];
  for (int i = 0; i < cfg.seeds; ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", i,
                  res.haq_rmse[static_cast<std::size_t>(i)],
                  res.ptq_rmse[static_cast<std::size_t>(i)]);
    csv += buf;
  }
  std::snprintf(buf, sizeof(buf), "pooled,%.9g,%.9g\n", res.haq_pooled,
                res.ptq_pooled);
  csv += buf;
  atomic_write((out / "bench.csv").string(), csv);
}

void run_hapo(const ExperimentManifest& m) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();

  hapo::Objective obj;
  obj.omega = m.hapo.omega;
  obj.psnr_max = m.hapo.psnr_max;
  obj.n_max = m.hapo.n_max;

  // coarse software stage: rank and encoder sigma, scored on a small fit
  const Eigen::MatrixXd reference =
      io::procedural_test_image(std::min(m.image.width, 32), std::min(m.image.height, 32));
  Eigen::MatrixXd coords, values;
  image_to_dataset(reference, &coords, &values);
  const int soft_bits = m.deploy.bits.empty() ? 12 : m.deploy.bits[0];

  auto software_eval = [&](const hapo::ParamSet& p) {
    ExperimentManifest trial = m;
    trial.network.rank = static_cast<int>(p.at("rank"));
    trial.encoder.sigma = p.at("sigma");
    trial.train.steps = std::min(m.train.steps, 500);
    ScalarFit fit = fit_scalar_field(trial, coords, values);
    const Eigen::MatrixXd recon =
        eval_scalar_image(fit.network, *fit.encoder,
                          static_cast<int>(reference.cols()),
                          static_cast<int>(reference.rows()));
    const double cells =
        static_cast<double>(fit.network.parameter_count()) * soft_bits;
    return hapo::EvalResult{metrics::psnr(reference, recon, 1.0), cells};
  };

  std::vector<hapo::Axis> soft_axes;
  {
    hapo::Axis rank{"rank", {}};
    for (int r : m.hapo.rank_grid) rank.values.push_back(r);
    soft_axes.push_back(rank);
    soft_axes.push_back({"sigma", m.hapo.sigma_grid});
  }
  hapo::PopulationConfig pcfg;
  pcfg.population = m.hapo.population;
  pcfg.generations = m.hapo.generations;
  pcfg.seed = m.seed;
  const auto soft = hapo::population_search(soft_axes, {}, pcfg, software_eval, obj);
  hapo::write_search_csv((out / "software_search.csv").string(), soft_axes, soft, h);

  // fine hardware stage on the best software configuration
  ExperimentManifest best = m;
  best.network.rank = static_cast<int>(soft.best.at("rank"));
  best.encoder.sigma = soft.best.at("sigma");
  best.train.steps = std::min(m.train.steps, 1000);
  ScalarFit fit = fit_scalar_field(best, coords, values);
  const Eigen::MatrixXd features = fit.encoder->encode_batch(coords);

  auto hardware_eval = [&](const hapo::ParamSet& p) {
    ExperimentManifest trial = best;
    trial.deploy.bits = {static_cast<int>(p.at("bits"))};
    trial.deploy.s = p.at("s");
    Rng dev_rng = make_rng(m.seed + 1000, 90);
    auto hw = deploy::deploy_network(
        fit.network, deploy_config_from(trial, 3),
        {{"features", calibration_subset(features, 64)}}, m.noise, dev_rng);
    Rng read_rng = make_rng(m.seed + 1000, 91);
    const Eigen::MatrixXd recon = eval_scalar_image_hw(
        hw, *fit.encoder, static_cast<int>(reference.cols()),
        static_cast<int>(reference.rows()), read_rng);
    return hapo::EvalResult{metrics::psnr(reference, recon, 1.0),
                            static_cast<double>(hw.cell_count())};
  };

  std::vector<hapo::Axis> hard_axes;
  {
    hapo::Axis bits{"bits", {}};
    for (int b : m.hapo.bit_grid) bits.values.push_back(b);
    hard_axes.push_back(bits);
    hard_axes.push_back({"s", m.hapo.s_grid});
  }
  const auto hard = hapo::grid_search(hard_axes, {}, hardware_eval, obj);
  hapo::write_search_csv((out / "hardware_search.csv").string(), hard_axes, hard, h);

  ExperimentManifest winner = best;
  winner.deploy.bits = {static_cast<int>(hard.best.at("bits"))};
  winner.deploy.s = hard.best.at("s");
  io::save_manifest((out / "best_manifest.json").string(), winner);
}

}  // namespace

namespace {

// Rebuild the scalar task's dataset, encoder, and network skeleton, then
// restore the checkpoint weights.
struct RestoredScalar {
  Eigen::MatrixXd reference_image;            // image task
  io::VolumeDataset volume;                   // ct tasks
  bool is_volume = false;
  ScalarFit fit;
};

RestoredScalar restore_scalar(const ExperimentManifest& m,
                              const std::string& checkpoint_path) {
  RestoredScalar r;
  Eigen::MatrixXd coords;
  if (m.task == "image-fit") {
    r.reference_image = load_task_image(m);
    coords.resize(2, 1);
  } else if (m.task == "ct-dense" || m.task == "ct-sparse") {
    r.volume = load_task_volume(m);
    r.is_volume = true;
    coords.resize(3, 1);
  } else {
    throw ConfigError("checkpoint restore supports scalar-field tasks only");
  }
  r.fit.encoder = make_input_encoder(m, static_cast<int>(coords.rows()));
  Rng net_rng = make_rng(m.seed, 60);
  r.fit.network = net::make_scalar_field_net(
      r.fit.encoder->output_dim(), m.network.width, m.network.rank,
      activation_from(m.network.activation), net::Activation::Identity, net_rng);
  for (auto& n : r.fit.network.nodes())
    if (n.kind == net::FieldNetwork::Node::Kind::Affine)
      n.layer.sine_omega = m.network.omega0;
  net::load_checkpoint(r.fit.network, checkpoint_path);
  return r;
}

}  // namespace

void run_deploy(const ExperimentManifest& m, const std::string& checkpoint_path) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  const std::string h = m.hash();
  if (m.deploy.bits.empty())
    throw ConfigError("deploy requires non-empty deploy.bits");

  RestoredScalar r = restore_scalar(m, checkpoint_path);

  // calibration from the task's own coordinate grid
  Eigen::MatrixXd coords, values;
  if (r.is_volume) {
    const auto all = io::evenly_spaced_slices(r.volume.slices, r.volume.slices);
    r.volume.to_training_set(all, &coords, &values);
  } else {
    image_to_dataset(r.reference_image, &coords, &values);
  }
  const Eigen::MatrixXd features = r.fit.encoder->encode_batch(coords);

  Rng dev_rng = make_rng(m.seed, 70);
  auto hw = deploy::deploy_network(
      r.fit.network, deploy_config_from(m, 3),
      {{"features", calibration_subset(features, 64)}}, m.noise, dev_rng);

  // mapping manifests + conductance snapshots
  const fs::path maps(out / "mappings");
  fs::create_directories(maps);
  int stage_idx = 0;
  for (const auto& stages : hw.stages())
    for (const auto& stage : stages) {
      char name[48];
      std::snprintf(name, sizeof(name), "stage_%02d.json", stage_idx++);
      std::visit([&](const auto& mp) {
        quant::save_mapping_manifest(mp, (maps / name).string(), hash_comment(m));
      }, stage.mapping);
    }
  for (int a = 0; a < hw.pool().array_count(); ++a) {
    char name[48];
    std::snprintf(name, sizeof(name), "array_%03d.memx", a);
    device::save_snapshot(hw.pool().array(a), m.noise, (maps / name).string());
  }

  std::vector<metrics::MetricsRow> rows;
  Rng read_rng = make_rng(m.seed, 71);
  if (r.is_volume) {
    double mse_acc = 0.0;
    for (int z = 0; z < r.volume.slices; ++z) {
      const double zc = r.volume.slices > 1
                            ? static_cast<double>(z) / (r.volume.slices - 1)
                            : 0.5;
      const Eigen::MatrixXd recon = eval_scalar_image_hw(
          hw, *r.fit.encoder, r.volume.width, r.volume.height, read_rng, zc);
      const auto& ref = r.volume.data[static_cast<std::size_t>(z)];
      mse_acc += metrics::mse(ref, recon);
      rows.push_back({m.task, "hw/slice" + std::to_string(z),
                      metrics::mse(ref, recon), metrics::psnr(ref, recon, 1.0),
                      metrics::ssim(ref, recon, 1.0), h});
    }
    rows.push_back({m.task, "hw/mean", mse_acc / r.volume.slices,
                    metrics::psnr_from_mse(mse_acc / r.volume.slices, 1.0), 0.0, h});
  } else {
    const int w = static_cast<int>(r.reference_image.cols());
    const int ht = static_cast<int>(r.reference_image.rows());
    const Eigen::MatrixXd recon =
        eval_scalar_image_hw(hw, *r.fit.encoder, w, ht, read_rng);
    io::write_pgm16((out / ("recon_" + m.deploy.method + ".pgm")).string(),
                    recon, hash_comment(m));
    rows.push_back({m.task, "hw-" + m.deploy.method,
                    metrics::mse(r.reference_image, recon),
                    metrics::psnr(r.reference_image, recon, 1.0),
                    metrics::ssim(r.reference_image, recon, 1.0), h});
  }
  metrics::write_metrics_csv((out / "metrics_deploy.csv").string(), rows, h);
}

void run_render(const ExperimentManifest& m, const std::string& checkpoint_path,
                const std::string& backend) {
  const fs::path out(m.out_dir);
  fs::create_directories(out);
  io::save_manifest((out / "manifest.json").string(), m);
  if (backend != "software" && backend != "hardware")
    throw ConfigError("backend must be software or hardware");

  RestoredScalar r = restore_scalar(m, checkpoint_path);
  const int w = r.is_volume ? r.volume.width : static_cast<int>(r.reference_image.cols());
  const int ht = r.is_volume ? r.volume.height : static_cast<int>(r.reference_image.rows());
  const int slices = r.is_volume ? r.volume.slices : 1;

  std::optional<deploy::DeployedNetwork> hw;
  if (backend == "hardware") {
    Eigen::MatrixXd coords, values;
    if (r.is_volume) {
      const auto all = io::evenly_spaced_slices(r.volume.slices, r.volume.slices);
      r.volume.to_training_set(all, &coords, &values);
    } else {
      image_to_dataset(r.reference_image, &coords, &values);
    }
    const Eigen::MatrixXd features = r.fit.encoder->encode_batch(coords);
    Rng dev_rng = make_rng(m.seed, 70);
    hw = deploy::deploy_network(
        r.fit.network, deploy_config_from(m, 3),
        {{"features", calibration_subset(features, 64)}}, m.noise, dev_rng);
  }

  Rng read_rng = make_rng(m.seed, 71);
  for (int z = 0; z < slices; ++z) {
    const double zc =
        r.is_volume
            ? (slices > 1 ? static_cast<double>(z) / (slices - 1) : 0.5)
            : -1.0;
    const Eigen::MatrixXd img =
        hw ? eval_scalar_image_hw(*hw, *r.fit.encoder, w, ht, read_rng, zc)
           : eval_scalar_image(r.fit.network, *r.fit.encoder, w, ht, zc);
    char name[48];
    std::snprintf(name, sizeof(name), "render_%s_%03d.pgm", backend.c_str(), z);
    io::write_pgm16((out / name).string(), img, hash_comment(m));
  }
}

int verify_outputs(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw DataError("no manifest.json under " + dir);
  const auto manifest = io::load_manifest((root / "manifest.json").string());
  const std::string h = manifest.hash();

  int mismatches = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    const std::string ext = p.extension().string();
    const std::string name = p.filename().string();
    if (name == "manifest.json" || name == "best_manifest.json") continue;
    if (name.size() > 10 && name.rfind(".meta.json") == name.size() - 10)
      continue;  // conductance snapshot sidecars carry device metadata

    bool ok = true;
    if (ext == ".csv") {
      std::ifstream is(p);
      std::string first;
      std::getline(is, first);
      ok = first == "# manifest=" + h;
    } else if (ext == ".ppm") {
      std::string comment;
      io::read_ppm16(p.string(), &comment);
      ok = comment.find("manifest=" + h) != std::string::npos;
    } else if (ext == ".pgm") {
      std::string comment;
      io::read_pgm16(p.string(), &comment);
      ok = comment.find("manifest=" + h) != std::string::npos;
    } else if (ext == ".nfw") {
      std::ifstream is(p.string() + ".json");
      if (!is) {
        ok = false;
      } else {
        const auto side = nlohmann::json::parse(is, nullptr, false);
        ok = !side.is_discarded() && side.value("manifest", "") == h;
      }
    } else if (ext == ".json") {
      std::ifstream is(p);
      const auto j = nlohmann::json::parse(is, nullptr, false);
      if (j.is_discarded()) {
        ok = false;
      } else if (j.contains("manifest")) {
        ok = j["manifest"] == h;
      } else {
        ok = j.value("comment", std::string()).find("manifest=" + h) !=
             std::string::npos;
      }
    } else {
      continue;
    }
    if (!ok) ++mismatches;
  }
  return mismatches;
}

void run(const ExperimentManifest& manifest) {
  manifest.validate();
  if (manifest.task == "image-fit") return run_image_fit(manifest);
  if (manifest.task == "ct-dense") return run_ct(manifest, false);
  if (manifest.task == "ct-sparse") return run_ct(manifest, true);
  if (manifest.task == "nerf") return run_nerf(manifest);
  if (manifest.task == "dnerf") return run_dnerf(manifest);
  if (manifest.task == "matmul-bench") return run_matmul_bench(manifest);
  if (manifest.task == "hapo") return run_hapo(manifest);
  throw ConfigError("unknown task: " + manifest.task);
}

}  // namespace memfield::pipeline
