#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "memfield/device.hpp"
#include "memfield/encoder.hpp"
#include "memfield/net.hpp"

namespace memfield::io {

struct ManifestNetwork {
  int width = 100;
  int rank = 10;
  std::string activation = "sine";  // sine | relu
  double omega0 = 30.0;
  // radiance-field extras
  int depth = 8;
  int feature_dim = 64;
  int view_width = 32;
};

struct ManifestEncoder {
  std::string mode = "gaussian";  // none | basic | positional | gaussian
  int m = 64;
  double sigma = 1.0;
  std::string spacing = "log2";  // log2 | linear
  double omega = 1.0;
  bool concat_raw = true;
  int cordic_iterations = 24;

  enc::EncoderConfig to_config(int input_dim) const;
};

struct ManifestDeploy {
  std::vector<int> bits;  // empty = software only
  double s = 1.5;
  std::string method = "haq";  // haq | ptq
  int dac_bits = 8;
  int adc_bits = 14;
  std::uint64_t max_cells = 512 * 512;
};

struct ManifestTrain {
  int steps = 3000;
  int batch = 1024;
  double lr = 1e-4;
  double lr_final = 0.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-7;
};

struct ManifestRender {
  int samples = 64;
  bool stratified = false;
  double t_near = 2.0, t_far = 6.0;
  std::array<double, 3> background{1.0, 1.0, 1.0};
};

struct ManifestVolume {
  int slices = 16, width = 64, height = 64;
  int train_slice_count = 16;
  std::vector<int> sweep;  // non-empty: PSNR-vs-slices curve
};

struct ManifestImage {
  int width = 64, height = 64;
};

struct ManifestScene {
  int n_views = 8;
  int width = 48, height = 48;
  double focal = 48.0;
  double camera_distance = 4.0;
  int frames = 0;  // > 0: dynamic scene with times evenly spaced in [0, 1]
};

struct ManifestHapo {
  double omega = 0.6;
  double psnr_max = 40.0;
  double n_max = 250000.0;
  int population = 6;
  int generations = 3;
  std::vector<int> bit_grid{10, 12, 14};
  std::vector<double> s_grid{1.3, 1.5, 2.0};
  std::vector<int> rank_grid{4, 8, 12};
  std::vector<double> sigma_grid{2.0, 4.0, 8.0};
};

/// Everything one run needs; serialized as structured text with a canonical
/// form for hashing, which every output artifact embeds.
struct ExperimentManifest {
  std::string task = "image-fit";  // image-fit | ct-dense | ct-sparse | nerf |
                                   // dnerf | matmul-bench | hapo
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string dataset = "procedural:default";
  ManifestNetwork network;
  ManifestEncoder encoder;
  ManifestEncoder view_encoder{.mode = "positional", .m = 4, .concat_raw = false};
  device::NoiseModel noise;
  ManifestDeploy deploy;
  ManifestTrain train;
  ManifestRender render;
  ManifestVolume volume;
  ManifestImage image;
  ManifestScene scene;
  ManifestHapo hapo;
  // matmul bench knobs
  int bench_length = 100;
  int bench_outputs = 100;
  int bench_weight_bits = 12;
  int bench_input_bits = 8;
  int bench_seeds = 20;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentManifest from_json(const nlohmann::json& j);

  std::string canonical() const { return to_json().dump(); }
  std::string hash() const { return to_hex(fnv1a64(canonical())); }

  net::TrainConfig train_config() const;
};

ExperimentManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const ExperimentManifest& m);

/// Applies "dotted.key=value" onto the manifest's JSON form (the CLI
/// override mechanism); values parse as JSON scalars/arrays when possible.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace memfield::io
