#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memfield/metrics.hpp"
#include "memfield/pipeline.hpp"

namespace {

using memfield::io::ExperimentManifest;

struct CommonArgs {
  std::string manifest_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--manifest", args->manifest_path,
                  "experiment manifest (JSON); defaults apply when omitted");
  cmd->add_option("--set", args->overrides,
                  "override a manifest field, dotted.key=value (repeatable)");
  cmd->add_option("--seed", args->seed, "override the experiment seed");
  cmd->add_option("--out", args->out_dir, "override the output directory");
}

ExperimentManifest resolve_manifest(const CommonArgs& args,
                                    const std::string& forced_task = "") {
  nlohmann::json j;
  if (args.manifest_path.empty()) {
    j = ExperimentManifest{}.to_json();
  } else {
    std::ifstream is(args.manifest_path);
    if (!is)
      throw memfield::DataError("cannot open manifest: " + args.manifest_path);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw memfield::DataError("malformed manifest: " + std::string(e.what()));
    }
  }
  if (!forced_task.empty()) j["task"] = forced_task;
  for (const auto& s : args.overrides) memfield::io::apply_override(j, s);
  auto m = ExperimentManifest::from_json(j);
  if (args.seed) m.seed = *args.seed;
  if (!args.out_dir.empty()) m.out_dir = args.out_dir;
  m.validate();
  return m;
}

Eigen::MatrixXd load_gray(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".ppm")
    return memfield::io::read_ppm16(path).luminance();
  return memfield::io::read_pgm16(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-field reconstruction on simulated resistive-memory hardware"};
  app.require_subcommand(1);

  CommonArgs fit_args, deploy_args, render_args, bench_args, hapo_args, scene_args;
  std::string deploy_ckpt, render_ckpt, render_backend = "software";
  std::string eval_reference, eval_candidate, eval_out;
  std::string verify_dir;

  auto* fit = app.add_subcommand("fit", "train per the manifest task and evaluate");
  add_common(fit, &fit_args);

  auto* dep = app.add_subcommand("deploy",
                                 "map a trained checkpoint onto simulated crossbars");
  add_common(dep, &deploy_args);
  dep->add_option("--checkpoint", deploy_ckpt, "trained .nfw checkpoint")->required();

  auto* ren = app.add_subcommand("render", "render reconstructions from a checkpoint");
  add_common(ren, &render_args);
  ren->add_option("--checkpoint", render_ckpt, "trained .nfw checkpoint")->required();
  ren->add_option("--backend", render_backend, "software | hardware");

  auto* ev = app.add_subcommand("eval", "image-quality metrics between two images");
  ev->add_option("--reference", eval_reference)->required();
  ev->add_option("--candidate", eval_candidate)->required();
  ev->add_option("--out", eval_out, "optional metrics CSV");

  auto* bench = app.add_subcommand("bench-matmul",
                                   "HAQ vs PTQ matrix-multiplication accuracy");
  add_common(bench, &bench_args);

  auto* hapo_cmd = app.add_subcommand("hapo", "hardware-aware hyperparameter search");
  add_common(hapo_cmd, &hapo_args);

  auto* scene = app.add_subcommand("make-scene", "generate a synthetic scene");
  add_common(scene, &scene_args);

  auto* verify = app.add_subcommand("verify", "check artifact manifest hashes");
  verify->add_option("--dir", verify_dir, "run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) {
      memfield::pipeline::run(resolve_manifest(fit_args));
    } else if (dep->parsed()) {
      memfield::pipeline::run_deploy(resolve_manifest(deploy_args), deploy_ckpt);
    } else if (ren->parsed()) {
      memfield::pipeline::run_render(resolve_manifest(render_args), render_ckpt,
                                     render_backend);
    } else if (ev->parsed()) {
      const auto ref = load_gray(eval_reference);
      const auto cand = load_gray(eval_candidate);
      const double m = memfield::metrics::mse(ref, cand);
      const double p = memfield::metrics::psnr(ref, cand, 1.0);
      const double s = memfield::metrics::ssim(ref, cand, 1.0);
      std::printf("mse=%.9g psnr_db=%.9g ssim=%.9g\n", m, p, s);
      if (!eval_out.empty())
        memfield::metrics::write_metrics_csv(
            eval_out, {{"eval", eval_candidate, m, p, s, ""}});
    } else if (bench->parsed()) {
      memfield::pipeline::run(resolve_manifest(bench_args, "matmul-bench"));
    } else if (hapo_cmd->parsed()) {
      memfield::pipeline::run(resolve_manifest(hapo_args, "hapo"));
    } else if (scene->parsed()) {
      auto m = resolve_manifest(scene_args, "nerf");
      // reuse the nerf scene defaults; frames > 0 makes it dynamic
      auto spec_manifest = m;
      memfield::io::SceneSpec spec;
      spec.n_views = m.scene.n_views;
      spec.width = m.scene.width;
      spec.height = m.scene.height;
      spec.focal = m.scene.focal;
      spec.camera_distance = m.scene.camera_distance;
      spec.samples_per_ray = m.render.samples;
      spec.t_near = m.render.t_near;
      spec.t_far = m.render.t_far;
      for (int f = 0; f < m.scene.frames; ++f)
        spec.times.push_back(m.scene.frames > 1
                                 ? static_cast<double>(f) / (m.scene.frames - 1)
                                 : 0.0);
      memfield::render::AnalyticShape ball;
      ball.center = {0.25, 0.1, 0.0};
      ball.half_extent = {0.62, 0.62, 0.62};
      ball.color = {0.85, 0.3, 0.25};
      ball.sigma = 14.0;
      memfield::render::AnalyticShape box;
      box.kind = memfield::render::AnalyticShape::Kind::Box;
      box.center = {-0.55, -0.3, 0.25};
      box.half_extent = {0.38, 0.3, 0.38};
      box.color = {0.2, 0.5, 0.85};
      box.sigma = 10.0;
      if (!spec.times.empty()) ball.velocity = {-0.5, 0.25, 0.15};
      spec.shapes = {ball, box};
      const auto built = memfield::io::make_synthetic_scene(spec);
      std::filesystem::create_directories(m.out_dir);
      memfield::io::save_manifest(
          (std::filesystem::path(m.out_dir) / "manifest.json").string(), m);
      memfield::io::save_scene(m.out_dir, built, "manifest=" + m.hash());
    } else if (verify->parsed()) {
      const int bad = memfield::pipeline::verify_outputs(verify_dir);
      if (bad > 0) {
        std::fprintf(stderr, "verify: %d artifact(s) with mismatched manifest hash\n",
                     bad);
        return 3;
      }
      std::printf("verify: all artifacts match the manifest hash\n");
    }
  } catch (const memfield::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const memfield::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const memfield::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
