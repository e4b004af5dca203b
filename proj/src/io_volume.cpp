#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "memfield/io.hpp"

namespace memfield::io {

void VolumeDataset::to_training_set(const std::vector<int>& slice_indices,
                                    Eigen::MatrixXd* coords,
                                    Eigen::MatrixXd* values) const {
  for (int z : slice_indices)
    if (z < 0 || z >= slices) throw ConfigError("slice index out of range");
  const long n = static_cast<long>(slice_indices.size()) * width * height;
  coords->resize(3, n);
  values->resize(1, n);
  long k = 0;
  for (int z : slice_indices) {
    const double zc = slices > 1 ? static_cast<double>(z) / (slices - 1) : 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        (*coords)(0, k) = width > 1 ? static_cast<double>(x) / (width - 1) : 0.5;
        (*coords)(1, k) = height > 1 ? static_cast<double>(y) / (height - 1) : 0.5;
        (*coords)(2, k) = zc;
        (*values)(0, k) = data[static_cast<std::size_t>(z)](y, x);
        ++k;
      }
  }
}

void save_volume(const std::string& dir, const VolumeDataset& volume,
                 const std::string& comment) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["comment"] = comment;
  index["slices"] = volume.slices;
  index["width"] = volume.width;
  index["height"] = volume.height;
  index["raw_min"] = volume.raw_min;
  index["raw_max"] = volume.raw_max;
  index["files"] = nlohmann::json::array();
  for (int z = 0; z < volume.slices; ++z) {
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%03d.pgm", z);
    write_pgm16((std::filesystem::path(dir) / name).string(),
                volume.data[static_cast<std::size_t>(z)], comment);
    index["files"].push_back(name);
  }
  atomic_write((std::filesystem::path(dir) / "volume.json").string(),
               index.dump(2) + "\n");
}

VolumeDataset ingest_volume(const std::string& dir, bool normalize) {
  const auto index_path = std::filesystem::path(dir) / "volume.json";
  std::ifstream is(index_path);
  if (!is) throw DataError("missing volume index: " + index_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed volume index: " + std::string(e.what()));
  }

  VolumeDataset v;
  v.slices = index.at("slices").get<int>();
  v.width = index.at("width").get<int>();
  v.height = index.at("height").get<int>();
  v.raw_min = index.value("raw_min", 0.0);
  v.raw_max = index.value("raw_max", 1.0);
  const auto files = index.at("files").get<std::vector<std::string>>();
  if (static_cast<int>(files.size()) != v.slices)
    throw DataError("volume index lists a wrong slice count");
  for (const auto& f : files) {
    auto slice = read_pgm16((std::filesystem::path(dir) / f).string());
    if (slice.rows() != v.height || slice.cols() != v.width)
      throw DataError("inconsistent slice dimensions in " + f);
    v.data.push_back(std::move(slice));
  }
  if (normalize) {
    double lo = v.data.front().minCoeff(), hi = v.data.front().maxCoeff();
    for (const auto& s : v.data) {
      lo = std::min(lo, s.minCoeff());
      hi = std::max(hi, s.maxCoeff());
    }
    v.raw_min = lo;
    v.raw_max = hi;
    for (auto& s : v.data) {
      if (hi > lo)
        s = ((s.array() - lo) / (hi - lo)).matrix();
      else
        s.setConstant(0.5);  // degenerate constant volume
    }
  }
  return v;
}

VolumeDataset make_phantom(int slices, int width, int height) {
  if (slices < 1 || width < 1 || height < 1)
    throw ConfigError("phantom dims must be positive");
  VolumeDataset v;
  v.slices = slices;
  v.width = width;
  v.height = height;
  v.raw_min = 0.0;
  v.raw_max = 1.0;

  struct Ellipsoid {
    double cx, cy, cz, rx, ry, rz, value;
  };
  // nested bodies plus two small lesions; intensities overwrite outer shells
  const Ellipsoid bodies[] = {
      {0.50, 0.50, 0.50, 0.42, 0.36, 0.48, 0.35},
      {0.50, 0.50, 0.50, 0.34, 0.28, 0.42, 0.55},
      {0.38, 0.42, 0.50, 0.10, 0.14, 0.30, 0.80},
      {0.64, 0.58, 0.46, 0.12, 0.08, 0.24, 0.15},
      {0.52, 0.34, 0.55, 0.05, 0.05, 0.12, 0.95},
  };

  for (int z = 0; z < slices; ++z) {
    Eigen::MatrixXd slab = Eigen::MatrixXd::Zero(height, width);
    const double zc = slices > 1 ? static_cast<double>(z) / (slices - 1) : 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double xc = width > 1 ? static_cast<double>(x) / (width - 1) : 0.5;
        const double yc = height > 1 ? static_cast<double>(y) / (height - 1) : 0.5;
        double value = 0.0;
        for (const auto& e : bodies) {
          const double dx = (xc - e.cx) / e.rx;
          const double dy = (yc - e.cy) / e.ry;
          const double dz = (zc - e.cz) / e.rz;
          const double d2 = dx * dx + dy * dy + dz * dz;
          // full value inside, smooth falloff across the shell boundary
          const double inside = std::clamp((1.1 - d2) / 0.2, 0.0, 1.0);
          if (inside > 0) value = value * (1.0 - inside) + e.value * inside;
        }
        slab(y, x) = value;
      }
    v.data.push_back(std::move(slab));
  }
  return v;
}

std::vector<int> evenly_spaced_slices(int total, int count) {
  if (count < 1 || count > total)
    throw ConfigError("slice count must be in 1..total");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int z = count == 1 ? total / 2
                             : static_cast<int>(std::llround(
                                   static_cast<double>(i) * (total - 1) /
                                   (count - 1)));
    if (out.empty() || out.back() != z) out.push_back(z);
  }
  // rounding collisions are only possible when count ~ total; fill gaps
  int z = 0;
  while (static_cast<int>(out.size()) < count) {
    if (std::find(out.begin(), out.end(), z) == out.end()) out.push_back(z);
    ++z;
  }
  std::sort(out.begin(), out.end());
  return out;
}

Eigen::MatrixXd procedural_test_image(int width, int height) {
  Eigen::MatrixXd img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = width > 1 ? static_cast<double>(x) / (width - 1) : 0.5;
      const double v = height > 1 ? static_cast<double>(y) / (height - 1) : 0.5;
      // smooth blob
      double val = 0.35 + 0.30 * std::exp(-((u - 0.30) * (u - 0.30) +
                                            (v - 0.40) * (v - 0.40)) /
                                          0.08);
      // concentric rings around (0.7, 0.62)
      const double r = std::hypot(u - 0.70, v - 0.62);
      val += 0.22 * std::cos(2 * std::numbers::pi * 9.0 * r) *
             std::exp(-r * r / 0.045);
      // fine diagonal texture
      val += 0.12 * std::sin(2 * std::numbers::pi * 11.0 * u) *
             std::cos(2 * std::numbers::pi * 8.0 * v);
      img(y, x) = std::clamp(val, 0.0, 1.0);
    }
  return img;
}

}  // namespace memfield::io
