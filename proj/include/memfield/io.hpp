#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "memfield/common.hpp"
#include "memfield/render.hpp"

namespace memfield::io {

// -- images ------------------------------------------------------------
// 16-bit binary PPM/PGM; the comment line carries the manifest hash.

void write_ppm16(const std::string& path, const render::Image& img,
                 const std::string& comment);
render::Image read_ppm16(const std::string& path,
                         std::string* comment = nullptr);

void write_pgm16(const std::string& path, const Eigen::MatrixXd& gray,
                 const std::string& comment);
Eigen::MatrixXd read_pgm16(const std::string& path,
                           std::string* comment = nullptr);

// -- volumes -----------------------------------------------------------

/// Normalized intensity volume with the original range recorded.
struct VolumeDataset {
  int slices = 0, width = 0, height = 0;
  std::vector<Eigen::MatrixXd> data;  // normalized to [0, 1]
  double raw_min = 0.0, raw_max = 1.0;

  long voxels() const { return static_cast<long>(slices) * width * height; }
  /// (x, y, z) in [0,1]^3 inputs plus intensities, one column per voxel,
  /// restricted to the given slice indices.
  void to_training_set(const std::vector<int>& slice_indices,
                       Eigen::MatrixXd* coords, Eigen::MatrixXd* values) const;
};

/// PGM slice stack with an index file (<dir>/volume.json).
void save_volume(const std::string& dir, const VolumeDataset& volume,
                 const std::string& comment);
/// With `normalize`, values are rescaled to [0,1] by the volume's min/max
/// (recorded for de-normalization); a constant volume maps to 0.5. Without
/// it, stored values round-trip bit-exactly at 16-bit precision.
VolumeDataset ingest_volume(const std::string& dir, bool normalize = false);

/// Deterministic nested-ellipsoid phantom, smooth along z.
VolumeDataset make_phantom(int slices, int width, int height);

/// Evenly spaced slice subset (the sparse-training selector).
std::vector<int> evenly_spaced_slices(int total, int count);

/// Deterministic procedural test image in [0,1]: smooth blobs, concentric
/// rings, and fine sinusoidal texture.
Eigen::MatrixXd procedural_test_image(int width, int height);

// -- synthetic scenes ----------------------------------------------------

struct SceneSpec {
  std::vector<render::AnalyticShape> shapes;
  int n_views = 8;
  int width = 64, height = 64;
  double focal = 64.0;
  double camera_distance = 4.0;
  int samples_per_ray = 64;
  double t_near = 2.0, t_far = 6.0;
  std::vector<double> times;  // non-empty for dynamic scenes
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<render::Camera> cameras;
  // references[view * times + frame] when dynamic, [view] when static
  std::vector<render::Image> references;
};

/// Cameras on a ring around the scene plus analytic ground-truth renders.
SyntheticScene make_synthetic_scene(const SceneSpec& spec);

void save_scene(const std::string& dir, const SyntheticScene& scene,
                const std::string& comment);

}  // namespace memfield::io
