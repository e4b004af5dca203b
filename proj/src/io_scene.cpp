#include <cmath>
#include <filesystem>
#include <numbers>

#include "json.hpp"
#include "memfield/io.hpp"

namespace memfield::io {

SyntheticScene make_synthetic_scene(const SceneSpec& spec) {
  if (spec.n_views < 1) throw ConfigError("need at least one view");
  for (const auto& s : spec.shapes)
    if (s.half_extent.minCoeff() <= 0 || s.sigma < 0)
      throw ConfigError("degenerate scene geometry");

  SyntheticScene scene;
  scene.spec = spec;
  render::AnalyticScene field(spec.shapes);

  const std::vector<double> times =
      spec.times.empty() ? std::vector<double>{0.0} : spec.times;

  for (int k = 0; k < spec.n_views; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / spec.n_views;
    const double elevation = 0.35;
    const Eigen::Vector3d eye(spec.camera_distance * std::cos(angle),
                              spec.camera_distance * std::sin(elevation),
                              spec.camera_distance * std::sin(angle));
    scene.cameras.push_back(render::Camera::look_at(
        eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), spec.focal,
        spec.width, spec.height));

    for (double t : times) {
      render::RenderConfig cfg;
      cfg.samples_per_ray = spec.samples_per_ray;
      cfg.t_near = spec.t_near;
      cfg.t_far = spec.t_far;
      cfg.background = spec.background;
      cfg.time = t;
      scene.references.push_back(render::render_image(field, scene.cameras.back(), cfg));
    }
  }
  return scene;
}

void save_scene(const std::string& dir, const SyntheticScene& scene,
                const std::string& comment) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["comment"] = comment;
  j["n_views"] = scene.spec.n_views;
  j["width"] = scene.spec.width;
  j["height"] = scene.spec.height;
  j["focal"] = scene.spec.focal;
  j["camera_distance"] = scene.spec.camera_distance;
  j["samples_per_ray"] = scene.spec.samples_per_ray;
  j["t_near"] = scene.spec.t_near;
  j["t_far"] = scene.spec.t_far;
  j["times"] = scene.spec.times;
  j["background"] = {scene.spec.background[0], scene.spec.background[1],
                     scene.spec.background[2]};
  j["shapes"] = nlohmann::json::array();
  for (const auto& s : scene.spec.shapes) {
    j["shapes"].push_back(
        {{"kind", s.kind == render::AnalyticShape::Kind::Sphere ? "sphere" : "box"},
         {"center", {s.center[0], s.center[1], s.center[2]}},
         {"half_extent", {s.half_extent[0], s.half_extent[1], s.half_extent[2]}},
         {"color", {s.color[0], s.color[1], s.color[2]}},
         {"sigma", s.sigma},
         {"velocity", {s.velocity[0], s.velocity[1], s.velocity[2]}}});
  }
  j["poses"] = nlohmann::json::array();
  for (const auto& cam : scene.cameras) {
    nlohmann::json pose = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) pose.push_back(cam.pose(r, c));
    j["poses"].push_back(pose);
  }
  atomic_write((std::filesystem::path(dir) / "scene.json").string(),
               j.dump(2) + "\n");

  const int frames = scene.spec.times.empty()
                         ? 1
                         : static_cast<int>(scene.spec.times.size());
  for (int k = 0; k < scene.spec.n_views; ++k)
    for (int f = 0; f < frames; ++f) {
      char name[48];
      std::snprintf(name, sizeof(name), "ref_v%02d_t%02d.ppm", k, f);
      write_ppm16((std::filesystem::path(dir) / name).string(),
                  scene.references[static_cast<std::size_t>(k * frames + f)], comment);
    }
}

}  // namespace memfield::io
