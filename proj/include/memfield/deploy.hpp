#pragma once

#include <variant>

#include "memfield/net.hpp"
#include "memfield/quant.hpp"

namespace memfield::deploy {

enum class QuantMethod { Haq, Ptq };

struct DeployConfig {
  std::vector<int> bits;  // one entry per affine layer, in node order
  double s = 1.5;
  QuantMethod method = QuantMethod::Haq;
  int dac_bits = 8;
  int adc_bits = 14;
  std::size_t max_cells = std::numeric_limits<std::size_t>::max();
};

/// One crossbar pass: a weight matrix (a dense layer, or one factor of a
/// low-rank pair) mapped onto cells with its calibrated converters.
struct MappedStage {
  std::variant<quant::HaqMapping, quant::PtqMapping> mapping;
  device::ConverterSpec dac;  // input side, range calibrated per stage

  std::size_t cell_count() const;
};

/// A network whose weight matrices live on simulated crossbars. Biases and
/// activations stay digital; the graph topology mirrors the source network.
class DeployedNetwork {
 public:
  net::FieldNetwork::ValueMap hw_forward(const net::FieldNetwork::ValueMap& in,
                                         Rng& rng) const;

  /// Software forward on the dequantized effective weights; the noiseless
  /// hardware path must match this within converter error.
  net::FieldNetwork::ValueMap reference_forward(
      const net::FieldNetwork::ValueMap& in) const;

  const net::FieldNetwork& reference_net() const { return reference_; }
  std::size_t cell_count() const;
  const device::NoiseModel& noise() const { return noise_; }
  const std::vector<std::vector<MappedStage>>& stages() const { return stages_; }
  const quant::ArrayPool& pool() const { return pool_; }

  friend DeployedNetwork deploy_network(const net::FieldNetwork& network,
                                const DeployConfig& cfg,
                                const net::FieldNetwork::ValueMap& calibration,
                                const device::NoiseModel& noise, Rng& rng);

 private:
  net::FieldNetwork reference_;  // topology + dequantized weights
  std::vector<std::vector<MappedStage>> stages_;  // per node; empty if not affine
  quant::ArrayPool pool_;
  device::NoiseModel noise_;
};

/// Programs every weight matrix (HAQ or PTQ at the same cell budget),
/// calibrates per-stage converter ranges from the calibration batch, and
/// returns the hardware-backed network.
DeployedNetwork deploy_network(const net::FieldNetwork& network, const DeployConfig& cfg,
                       const net::FieldNetwork::ValueMap& calibration,
                       const device::NoiseModel& noise, Rng& rng);

}  // namespace memfield::deploy
