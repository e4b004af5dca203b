#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "memfield/common.hpp"
#include "memfield/render.hpp"

namespace memfield::metrics {

/// Mean squared error over a grayscale pair.
double mse(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate);
/// Channel-averaged MSE over RGB images.
double mse(const render::Image& reference, const render::Image& candidate);

inline constexpr double kPsnrCap = 100.0;  // identical images

/// 10 * log10(MAX^2 / MSE), capped at 100 dB for zero error.
double psnr_from_mse(double mse_value, double max_value);
double psnr(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate,
            double max_value);
double psnr(const render::Image& reference, const render::Image& candidate,
            double max_value = 1.0);

struct SsimOptions {
  int window = 8;  // stride-1 sliding windows
  double k1 = 0.01, k2 = 0.03;  // C1=(k1 MAX)^2, C2=(k2 MAX)^2, C3=C2/2
};

/// Mean of luminance * contrast * structure over sliding windows.
double ssim(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& candidate,
            double max_value, const SsimOptions& options = {});
double ssim(const render::Image& reference, const render::Image& candidate,
            double max_value = 1.0, const SsimOptions& options = {});

struct MetricsRow {
  std::string experiment_id;
  std::string image_id;
  double mse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::string config_hash;
};

/// Deterministic CSV: optional manifest comment, header, then one
/// fixed-format row per image.
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows,
                       const std::string& manifest_hash = "");

}  // namespace memfield::metrics
