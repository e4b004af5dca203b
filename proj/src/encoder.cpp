#include "memfield/encoder.hpp"

#include <cmath>
#include <numbers>

namespace memfield::enc {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

int EncoderConfig::output_dim() const {
  int dim = 0;
  switch (mode) {
    case EncoderMode::None: dim = input_dim; break;
    case EncoderMode::Basic: dim = 2 * input_dim; break;
    case EncoderMode::Positional: dim = 2 * feature_count * input_dim; break;
    case EncoderMode::Gaussian: dim = 2 * feature_count; break;
  }
  if (concat_raw_input) dim += input_dim;
  return dim;
}

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("encoder input_dim must be >= 1");
  if ((mode == EncoderMode::Positional || mode == EncoderMode::Gaussian) &&
      feature_count < 1)
    throw ConfigError("encoder feature_count must be >= 1");
  if (mode == EncoderMode::Positional && positional_scale <= 0)
    throw ConfigError("positional_scale must be > 0");
  if (mode == EncoderMode::Gaussian && gaussian_sigma <= 0)
    throw ConfigError("gaussian_sigma must be > 0");
  if (cordic_iterations < 1)
    throw ConfigError("cordic_iterations must be >= 1");
}

Eigen::MatrixXd standardize_formed_matrix(const device::CrossbarArray& array,
                                          double sigma) {
  if (array.unformed_count() > 0)
    throw StateError("standardization requires a fully formed array");
  const Eigen::MatrixXd& g = array.conductances();
  const double mean = g.mean();
  const double var = (g.array() - mean).square().mean();
  const double std = std::sqrt(var);
  if (!(std > 0)) throw ConfigError("formed array has zero variance");
  return sigma * (g.transpose().array() - mean).matrix() / std;
}

Encoder::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.mode == EncoderMode::Gaussian)
    throw ConfigError("Gaussian encoder needs a formed matrix");
}

Encoder::Encoder(const EncoderConfig& cfg, const device::CrossbarArray& formed,
                 const device::NoiseModel& noise,
                 const device::ConverterSpec& conv)
    : cfg_(cfg), conv_(conv) {
  cfg_.validate();
  if (cfg_.mode != EncoderMode::Gaussian)
    throw ConfigError("formed matrix only applies to the Gaussian mode");
  if (formed.rows() != cfg_.input_dim || formed.cols() != cfg_.feature_count)
    throw ConfigError("formed array must be input_dim x feature_count");
  if (formed.unformed_count() > 0)
    throw StateError("Gaussian encoder requires a fully formed array");

  formed_ = std::make_shared<device::CrossbarArray>(formed);
  noise_ = noise;
  noise_.read_std_rel = 0.0;  // frozen projection
  b_ = standardize_formed_matrix(formed, cfg_.gaussian_sigma);
  g_mean_ = formed.conductances().mean();
  g_std_ = std::sqrt(
      (formed.conductances().array() - g_mean_).square().mean());
}

const Eigen::MatrixXd& Encoder::gaussian_matrix() const {
  if (cfg_.mode != EncoderMode::Gaussian)
    throw ConfigError("gaussian_matrix only exists in Gaussian mode");
  return b_;
}

Eigen::VectorXd Encoder::project(std::span<const double> x) const {
  Rng rng = make_rng(0);  // unused: read noise is zero on the frozen matrix
  const auto out = device::vmm(*formed_, x, conv_, g_mean_, noise_, rng);
  return out * (cfg_.gaussian_sigma / g_std_);
}

Eigen::VectorXd Encoder::encode(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != cfg_.input_dim)
    throw ConfigError("encoder input dimension mismatch");

  Eigen::VectorXd angles;  // cycles; multiplied by 2*pi at evaluation
  switch (cfg_.mode) {
    case EncoderMode::None: {
      Eigen::VectorXd out(cfg_.output_dim());
      for (int i = 0; i < cfg_.input_dim; ++i) out[i] = x[static_cast<std::size_t>(i)];
      if (cfg_.concat_raw_input)
        for (int i = 0; i < cfg_.input_dim; ++i)
          out[cfg_.input_dim + i] = x[static_cast<std::size_t>(i)];
      return out;
    }
    case EncoderMode::Basic: {
      angles.resize(cfg_.input_dim);
      for (int i = 0; i < cfg_.input_dim; ++i) angles[i] = x[static_cast<std::size_t>(i)];
      break;
    }
    case EncoderMode::Positional: {
      const int m = cfg_.feature_count;
      angles.resize(cfg_.input_dim * m);
      for (int i = 0; i < cfg_.input_dim; ++i)
        for (int j = 0; j < m; ++j) {
          const double f = cfg_.spacing == FrequencySpacing::Log2
                               ? cfg_.positional_scale * std::ldexp(1.0, j)
                               : static_cast<double>(j) / cfg_.positional_scale;
          angles[i * m + j] = f * x[static_cast<std::size_t>(i)];
        }
      break;
    }
    case EncoderMode::Gaussian: {
      angles = project(x);
      break;
    }
  }

  const int n = static_cast<int>(angles.size());
  Eigen::VectorXd out(cfg_.output_dim());
  for (int k = 0; k < n; ++k) {
    const auto [s, c] = cordic_sincos(kTwoPi * angles[k], cfg_.cordic_iterations);
    out[k] = c;
    out[n + k] = s;
  }
  if (cfg_.concat_raw_input)
    for (int i = 0; i < cfg_.input_dim; ++i)
      out[2 * n + i] = x[static_cast<std::size_t>(i)];
  return out;
}

Eigen::MatrixXd Encoder::encode_batch(const Eigen::MatrixXd& xs) const {
  Eigen::MatrixXd out(cfg_.output_dim(), xs.cols());
  std::vector<double> col(static_cast<std::size_t>(xs.rows()));
  for (Eigen::Index k = 0; k < xs.cols(); ++k) {
    Eigen::Map<Eigen::VectorXd>(col.data(), xs.rows()) = xs.col(k);
    out.col(k) = encode(col);
  }
  return out;
}

Eigen::MatrixXd Encoder::input_jacobian(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != cfg_.input_dim)
    throw ConfigError("encoder input dimension mismatch");
  const int d = cfg_.input_dim;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(cfg_.output_dim(), d);

  auto fill_raw_rows = [&](int row0) {
    for (int i = 0; i < d; ++i) jac(row0 + i, i) = 1.0;
  };

  switch (cfg_.mode) {
    case EncoderMode::None: {
      fill_raw_rows(0);
      if (cfg_.concat_raw_input) fill_raw_rows(d);
      return jac;
    }
    case EncoderMode::Basic: {
      for (int i = 0; i < d; ++i) {
        const double a = kTwoPi * x[static_cast<std::size_t>(i)];
        jac(i, i) = -kTwoPi * std::sin(a);      // d cos / dx
        jac(d + i, i) = kTwoPi * std::cos(a);   // d sin / dx
      }
      if (cfg_.concat_raw_input) fill_raw_rows(2 * d);
      return jac;
    }
    case EncoderMode::Positional: {
      const int m = cfg_.feature_count;
      const int n = d * m;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) {
          const double f = cfg_.spacing == FrequencySpacing::Log2
                               ? cfg_.positional_scale * std::ldexp(1.0, j)
                               : static_cast<double>(j) / cfg_.positional_scale;
          const double a = kTwoPi * f * x[static_cast<std::size_t>(i)];
          jac(i * m + j, i) = -kTwoPi * f * std::sin(a);
          jac(n + i * m + j, i) = kTwoPi * f * std::cos(a);
        }
      if (cfg_.concat_raw_input) fill_raw_rows(2 * n);
      return jac;
    }
    case EncoderMode::Gaussian: {
      const int m = cfg_.feature_count;
      const Eigen::VectorXd y = project(x);
      for (int k = 0; k < m; ++k) {
        const double a = kTwoPi * y[k];
        jac.row(k) = -kTwoPi * std::sin(a) * b_.row(k);
        jac.row(m + k) = kTwoPi * std::cos(a) * b_.row(k);
      }
      if (cfg_.concat_raw_input) fill_raw_rows(2 * m);
      return jac;
    }
  }
  return jac;
}

}  // namespace memfield::enc
