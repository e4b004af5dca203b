#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>

#include "memfield/cordic.hpp"
#include "memfield/device.hpp"

namespace memfield::enc {

enum class EncoderMode { None, Basic, Positional, Gaussian };
enum class FrequencySpacing { Log2, Linear };

struct EncoderConfig {
  EncoderMode mode = EncoderMode::None;
  int input_dim = 3;            // d
  int feature_count = 64;       // m
  double positional_scale = 1.0;  // omega
  double gaussian_sigma = 1.0;    // sigma of the standardized projection
  FrequencySpacing spacing = FrequencySpacing::Log2;
  bool concat_raw_input = false;
  int cordic_iterations = 24;

  int output_dim() const;
  void validate() const;
};

/// B = sigma * (G - mean(G)) / std(G), computed once from a fully formed
/// array and frozen. G is read as (d x m): coordinates drive the rows,
/// features come off the columns.
Eigen::MatrixXd standardize_formed_matrix(const device::CrossbarArray& array,
                                          double sigma);

/// Immutable input encoder. Feature layout is [cos block, sin block]
/// (dimension-major, then frequency, for the positional mode), with the raw
/// input appended when configured. Sinusoids are evaluated with CORDIC.
class Encoder {
 public:
  /// None / Basic / Positional modes.
  explicit Encoder(const EncoderConfig& cfg);
  /// Gaussian mode: binds a formed (d x m) array. The projection runs through
  /// the analog VMM on the frozen conductances (read noise does not apply to
  /// the frozen matrix; the MLP trains against a fixed encoding).
  Encoder(const EncoderConfig& cfg, const device::CrossbarArray& formed,
          const device::NoiseModel& noise,
          const device::ConverterSpec& conv = device::ConverterSpec::ideal());

  const EncoderConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.output_dim(); }

  Eigen::VectorXd encode(std::span<const double> x) const;
  /// Columns are samples.
  Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& xs) const;

  /// d(features)/d(x), output_dim x d, with analytic sinusoid derivatives;
  /// needed when gradients flow into the encoder input (deformation fields).
  Eigen::MatrixXd input_jacobian(std::span<const double> x) const;

  /// The standardized projection matrix (m x d); Gaussian mode only.
  const Eigen::MatrixXd& gaussian_matrix() const;

 private:
  Eigen::VectorXd project(std::span<const double> x) const;  // angles / (2*pi)

  EncoderConfig cfg_;
  // Gaussian state, frozen at construction
  std::shared_ptr<device::CrossbarArray> formed_;
  device::NoiseModel noise_ = device::NoiseModel::noiseless();
  device::ConverterSpec conv_ = device::ConverterSpec::ideal();
  Eigen::MatrixXd b_;       // m x d standardized projection
  double g_mean_ = 0.0;
  double g_std_ = 1.0;
};

}  // namespace memfield::enc
