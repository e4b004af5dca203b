#include "memfield/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace memfield::metrics {

namespace {

void check_shapes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("image shapes differ");
  if (a.size() == 0) throw ConfigError("empty image");
}

}  // namespace

double mse(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate) {
  check_shapes(reference, candidate);
  return (reference - candidate).squaredNorm() / static_cast<double>(reference.size());
}

double mse(const render::Image& reference, const render::Image& candidate) {
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) acc += mse(reference.channel(c), candidate.channel(c));
  return acc / 3.0;
}

double psnr_from_mse(double mse_value, double max_value) {
  if (mse_value <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse_value));
}

double psnr(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate,
            double max_value) {
  return psnr_from_mse(mse(reference, candidate), max_value);
}

double psnr(const render::Image& reference, const render::Image& candidate,
            double max_value) {
  return psnr_from_mse(mse(reference, candidate), max_value);
}

double ssim(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate,
            double max_value, const SsimOptions& options) {
  check_shapes(reference, candidate);
  const int w = options.window;
  if (w < 1 || w > reference.rows() || w > reference.cols())
    throw ConfigError("ssim window larger than the image");

  const double c1 = (options.k1 * max_value) * (options.k1 * max_value);
  const double c2 = (options.k2 * max_value) * (options.k2 * max_value);
  const double c3 = c2 / 2.0;
  const double inv_n = 1.0 / (w * w);

  double total = 0.0;
  long windows = 0;
  for (int r = 0; r + w <= reference.rows(); ++r) {
    for (int c = 0; c + w <= reference.cols(); ++c) {
      const auto x = reference.block(r, c, w, w);
      const auto y = candidate.block(r, c, w, w);
      const double mx = x.mean();
      const double my = y.mean();
      const double vx = (x.array() - mx).square().sum() * inv_n;
      const double vy = (y.array() - my).square().sum() * inv_n;
      const double cov = ((x.array() - mx) * (y.array() - my)).sum() * inv_n;
      const double sx = std::sqrt(std::max(0.0, vx));
      const double sy = std::sqrt(std::max(0.0, vy));
      const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
      const double ct = (2 * sx * sy + c2) / (vx + vy + c2);
      const double st = (cov + c3) / (sx * sy + c3);
      total += l * ct * st;
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double ssim(const render::Image& reference, const render::Image& candidate,
            double max_value, const SsimOptions& options) {
  double acc = 0.0;
  for (int c = 0; c < 3; ++c)
    acc += ssim(reference.channel(c), candidate.channel(c), max_value, options);
  return acc / 3.0;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows,
                       const std::string& manifest_hash) {
  std::string out;
  if (!manifest_hash.empty()) out += "# manifest=" + manifest_hash + "\n";
  out += "experiment_id,image_id,mse,psnr_db,ssim,config_hash\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g", r.mse, r.psnr_db, r.ssim);
    out += r.experiment_id + "," + r.image_id + "," + buf + "," +
           r.config_hash + "\n";
  }
  atomic_write(path, out);
}

}  // namespace memfield::metrics
