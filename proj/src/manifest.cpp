#include "memfield/manifest.hpp"

#include <fstream>
#include <set>

namespace memfield::io {

enc::EncoderConfig ManifestEncoder::to_config(int input_dim) const {
  enc::EncoderConfig cfg;
  cfg.input_dim = input_dim;
  cfg.feature_count = m;
  cfg.gaussian_sigma = sigma;
  cfg.positional_scale = omega;
  cfg.concat_raw_input = concat_raw;
  cfg.cordic_iterations = cordic_iterations;
  if (mode == "none") cfg.mode = enc::EncoderMode::None;
  else if (mode == "basic") cfg.mode = enc::EncoderMode::Basic;
  else if (mode == "positional") cfg.mode = enc::EncoderMode::Positional;
  else if (mode == "gaussian") cfg.mode = enc::EncoderMode::Gaussian;
  else throw ConfigError("unknown encoder mode: " + mode);
  if (spacing == "log2") cfg.spacing = enc::FrequencySpacing::Log2;
  else if (spacing == "linear") cfg.spacing = enc::FrequencySpacing::Linear;
  else throw ConfigError("unknown frequency spacing: " + spacing);
  return cfg;
}

void ExperimentManifest::validate() const {
  static const std::set<std::string> kTasks{
      "image-fit", "ct-dense", "ct-sparse", "nerf",
      "dnerf",     "matmul-bench", "hapo"};
  if (!kTasks.count(task)) throw ConfigError("unknown task: " + task);
  if (network.activation != "sine" && network.activation != "relu")
    throw ConfigError("unknown activation: " + network.activation);
  if (deploy.method != "haq" && deploy.method != "ptq")
    throw ConfigError("unknown quantization method: " + deploy.method);
  noise.validate();
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
}

net::TrainConfig ExperimentManifest::train_config() const {
  net::TrainConfig cfg;
  cfg.steps = train.steps;
  cfg.batch = train.batch;
  cfg.lr = train.lr;
  cfg.lr_final = train.lr_final;
  cfg.beta1 = train.beta1;
  cfg.beta2 = train.beta2;
  cfg.eps = train.eps;
  cfg.seed = seed;
  return cfg;
}

namespace {

nlohmann::json encoder_json(const ManifestEncoder& e) {
  return {{"mode", e.mode},       {"m", e.m},
          {"sigma", e.sigma},     {"spacing", e.spacing},
          {"omega", e.omega},     {"concat_raw", e.concat_raw},
          {"cordic_iterations", e.cordic_iterations}};
}

ManifestEncoder encoder_from_json(const nlohmann::json& j, ManifestEncoder d) {
  d.mode = j.value("mode", d.mode);
  d.m = j.value("m", d.m);
  d.sigma = j.value("sigma", d.sigma);
  d.spacing = j.value("spacing", d.spacing);
  d.omega = j.value("omega", d.omega);
  d.concat_raw = j.value("concat_raw", d.concat_raw);
  d.cordic_iterations = j.value("cordic_iterations", d.cordic_iterations);
  return d;
}

}  // namespace

nlohmann::json ExperimentManifest::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["dataset"] = dataset;
  j["network"] = {{"width", network.width},
                  {"rank", network.rank},
                  {"activation", network.activation},
                  {"omega0", network.omega0},
                  {"depth", network.depth},
                  {"feature_dim", network.feature_dim},
                  {"view_width", network.view_width}};
  j["encoder"] = encoder_json(encoder);
  j["view_encoder"] = encoder_json(view_encoder);
  j["noise"] = {{"lrs_mean", noise.lrs_mean},
                {"lrs_std", noise.lrs_std},
                {"hrs_mean", noise.hrs_mean},
                {"hrs_std", noise.hrs_std},
                {"read_std_rel", noise.read_std_rel},
                {"vcmac_gain_err_rel", noise.vcmac_gain_err_rel},
                {"seed", noise.seed}};
  j["deploy"] = {{"bits", deploy.bits},       {"s", deploy.s},
                 {"method", deploy.method},   {"dac_bits", deploy.dac_bits},
                 {"adc_bits", deploy.adc_bits}, {"max_cells", deploy.max_cells}};
  j["train"] = {{"steps", train.steps},   {"batch", train.batch},
                {"lr", train.lr},         {"lr_final", train.lr_final},
                {"beta1", train.beta1},   {"beta2", train.beta2},
                {"eps", train.eps}};
  j["render"] = {{"samples", render.samples},
                 {"stratified", render.stratified},
                 {"t_near", render.t_near},
                 {"t_far", render.t_far},
                 {"background", render.background}};
  j["volume"] = {{"slices", volume.slices},
                 {"width", volume.width},
                 {"height", volume.height},
                 {"train_slice_count", volume.train_slice_count},
                 {"sweep", volume.sweep}};
  j["image"] = {{"width", image.width}, {"height", image.height}};
  j["scene"] = {{"n_views", scene.n_views},
                {"width", scene.width},
                {"height", scene.height},
                {"focal", scene.focal},
                {"camera_distance", scene.camera_distance},
                {"frames", scene.frames}};
  j["hapo"] = {{"omega", hapo.omega},
               {"psnr_max", hapo.psnr_max},
               {"n_max", hapo.n_max},
               {"population", hapo.population},
               {"generations", hapo.generations},
               {"bit_grid", hapo.bit_grid},
               {"s_grid", hapo.s_grid},
               {"rank_grid", hapo.rank_grid},
               {"sigma_grid", hapo.sigma_grid}};
  j["bench"] = {{"length", bench_length},
                {"outputs", bench_outputs},
                {"weight_bits", bench_weight_bits},
                {"input_bits", bench_input_bits},
                {"seeds", bench_seeds}};
  return j;
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& j) {
  ExperimentManifest m;
  m.task = j.value("task", m.task);
  m.seed = j.value("seed", m.seed);
  m.out_dir = j.value("out_dir", m.out_dir);
  m.dataset = j.value("dataset", m.dataset);
  if (j.contains("network")) {
    const auto& n = j["network"];
    m.network.width = n.value("width", m.network.width);
    m.network.rank = n.value("rank", m.network.rank);
    m.network.activation = n.value("activation", m.network.activation);
    m.network.omega0 = n.value("omega0", m.network.omega0);
    m.network.depth = n.value("depth", m.network.depth);
    m.network.feature_dim = n.value("feature_dim", m.network.feature_dim);
    m.network.view_width = n.value("view_width", m.network.view_width);
  }
  if (j.contains("encoder")) m.encoder = encoder_from_json(j["encoder"], m.encoder);
  if (j.contains("view_encoder"))
    m.view_encoder = encoder_from_json(j["view_encoder"], m.view_encoder);
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    m.noise.lrs_mean = n.value("lrs_mean", m.noise.lrs_mean);
    m.noise.lrs_std = n.value("lrs_std", m.noise.lrs_std);
    m.noise.hrs_mean = n.value("hrs_mean", m.noise.hrs_mean);
    m.noise.hrs_std = n.value("hrs_std", m.noise.hrs_std);
    m.noise.read_std_rel = n.value("read_std_rel", m.noise.read_std_rel);
    m.noise.vcmac_gain_err_rel =
        n.value("vcmac_gain_err_rel", m.noise.vcmac_gain_err_rel);
    m.noise.seed = n.value("seed", m.noise.seed);
  }
  if (j.contains("deploy")) {
    const auto& d = j["deploy"];
    m.deploy.bits = d.value("bits", m.deploy.bits);
    m.deploy.s = d.value("s", m.deploy.s);
    m.deploy.method = d.value("method", m.deploy.method);
    m.deploy.dac_bits = d.value("dac_bits", m.deploy.dac_bits);
    m.deploy.adc_bits = d.value("adc_bits", m.deploy.adc_bits);
    m.deploy.max_cells = d.value("max_cells", m.deploy.max_cells);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    m.train.steps = t.value("steps", m.train.steps);
    m.train.batch = t.value("batch", m.train.batch);
    m.train.lr = t.value("lr", m.train.lr);
    m.train.lr_final = t.value("lr_final", m.train.lr_final);
    m.train.beta1 = t.value("beta1", m.train.beta1);
    m.train.beta2 = t.value("beta2", m.train.beta2);
    m.train.eps = t.value("eps", m.train.eps);
  }
  if (j.contains("render")) {
    const auto& r = j["render"];
    m.render.samples = r.value("samples", m.render.samples);
    m.render.stratified = r.value("stratified", m.render.stratified);
    m.render.t_near = r.value("t_near", m.render.t_near);
    m.render.t_far = r.value("t_far", m.render.t_far);
    m.render.background = r.value("background", m.render.background);
  }
  if (j.contains("volume")) {
    const auto& v = j["volume"];
    m.volume.slices = v.value("slices", m.volume.slices);
    m.volume.width = v.value("width", m.volume.width);
    m.volume.height = v.value("height", m.volume.height);
    m.volume.train_slice_count =
        v.value("train_slice_count", m.volume.train_slice_count);
    m.volume.sweep = v.value("sweep", m.volume.sweep);
  }
  if (j.contains("image")) {
    m.image.width = j["image"].value("width", m.image.width);
    m.image.height = j["image"].value("height", m.image.height);
  }
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    m.scene.n_views = s.value("n_views", m.scene.n_views);
    m.scene.width = s.value("width", m.scene.width);
    m.scene.height = s.value("height", m.scene.height);
    m.scene.focal = s.value("focal", m.scene.focal);
    m.scene.camera_distance = s.value("camera_distance", m.scene.camera_distance);
    m.scene.frames = s.value("frames", m.scene.frames);
  }
  if (j.contains("hapo")) {
    const auto& h = j["hapo"];
    m.hapo.omega = h.value("omega", m.hapo.omega);
    m.hapo.psnr_max = h.value("psnr_max", m.hapo.psnr_max);
    m.hapo.n_max = h.value("n_max", m.hapo.n_max);
    m.hapo.population = h.value("population", m.hapo.population);
    m.hapo.generations = h.value("generations", m.hapo.generations);
    m.hapo.bit_grid = h.value("bit_grid", m.hapo.bit_grid);
    m.hapo.s_grid = h.value("s_grid", m.hapo.s_grid);
    m.hapo.rank_grid = h.value("rank_grid", m.hapo.rank_grid);
    m.hapo.sigma_grid = h.value("sigma_grid", m.hapo.sigma_grid);
  }
  if (j.contains("bench")) {
    const auto& b = j["bench"];
    m.bench_length = b.value("length", m.bench_length);
    m.bench_outputs = b.value("outputs", m.bench_outputs);
    m.bench_weight_bits = b.value("weight_bits", m.bench_weight_bits);
    m.bench_input_bits = b.value("input_bits", m.bench_input_bits);
    m.bench_seeds = b.value("seeds", m.bench_seeds);
  }
  return m;
}

ExperimentManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
  auto m = ExperimentManifest::from_json(j);
  m.validate();
  return m;
}

void save_manifest(const std::string& path, const ExperimentManifest& m) {
  atomic_write(path, m.to_json().dump(2) + "\n");
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("bad override key: " + key);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace memfield::io
