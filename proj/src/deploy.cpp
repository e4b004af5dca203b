#include "memfield/deploy.hpp"

#include <algorithm>
#include <cmath>

namespace memfield::deploy {

using net::FieldNetwork;

std::size_t MappedStage::cell_count() const {
  return std::visit([](const auto& m) { return m.cell_count(); }, mapping);
}

namespace {

device::ConverterSpec make_dac(const Eigen::MatrixXd& activations, int bits) {
  device::ConverterSpec dac;
  dac.dac_bits = bits;
  const double lo = activations.minCoeff();
  const double hi = activations.maxCoeff();
  const double span = std::max(hi - lo, 1e-9);
  dac.in_lo = lo - 0.05 * span;
  dac.in_hi = hi + 0.05 * span;
  return dac;
}

Eigen::MatrixXd probe_columns(const Eigen::MatrixXd& m, int max_cols) {
  if (m.cols() <= max_cols) return m;
  Eigen::MatrixXd out(m.rows(), max_cols);
  const Eigen::Index stride = m.cols() / max_cols;
  for (int k = 0; k < max_cols; ++k) out.col(k) = m.col(k * stride);
  return out;
}

}  // namespace

DeployedNetwork deploy_network(const net::FieldNetwork& network, const DeployConfig& cfg,
                       const net::FieldNetwork::ValueMap& calibration,
                       const device::NoiseModel& noise, Rng& rng) {
  noise.validate();
  if (cfg.method == QuantMethod::Haq &&
      (!(cfg.s > 1.0) || cfg.s > device::kVcmacMaxRatio))
    throw ConfigError("significance ratio must satisfy 1 < s <= 2.5");

  std::vector<int> affine_nodes;
  for (int i = 0; i < static_cast<int>(network.nodes().size()); ++i)
    if (network.nodes()[static_cast<std::size_t>(i)].kind ==
        FieldNetwork::Node::Kind::Affine)
      affine_nodes.push_back(i);
  if (cfg.bits.size() != affine_nodes.size())
    throw ConfigError("deploy needs one bit width per layer (" +
                      std::to_string(affine_nodes.size()) + " layers)");
  for (int b : cfg.bits)
    if (b < 4 || b > 16)
      throw ConfigError("deployable bit widths are 4..16");

  // calibration statistics from the software forward
  FieldNetwork::Trace trace;
  network.forward(calibration, &trace);

  DeployedNetwork d;
  d.noise_ = noise;
  d.pool_ = quant::ArrayPool(cfg.max_cells);
  d.reference_ = network;
  d.stages_.assign(network.nodes().size(), {});

  Rng quiet_rng = make_rng(0);
  device::NoiseModel quiet = noise;
  quiet.read_std_rel = 0.0;

  for (std::size_t li = 0; li < affine_nodes.size(); ++li) {
    const int node = affine_nodes[li];
    const auto nu = static_cast<std::size_t>(node);
    const auto& layer = network.nodes()[nu].layer;
    const int bits = cfg.bits[li];
    const auto& input_act = trace.value[static_cast<std::size_t>(network.nodes()[nu].src)];

    auto map_matrix = [&](const Eigen::MatrixXd& w, const Eigen::MatrixXd& acts,
                          const std::string& name) {
      MappedStage stage;
      stage.dac = make_dac(acts, cfg.dac_bits);
      const Eigen::MatrixXd probes = probe_columns(acts, 256);
      if (cfg.method == QuantMethod::Haq) {
        auto m = quant::haq_program(w, bits, cfg.s, d.pool_, noise, rng, {}, name);
        quant::calibrate_adc(m, d.pool_, probes, stage.dac, cfg.adc_bits, noise);
        stage.mapping = std::move(m);
      } else {
        auto m = quant::ptq_program(w, bits, d.pool_, noise, rng, name);
        quant::calibrate_adc(m, d.pool_, probes, stage.dac, cfg.adc_bits, noise);
        stage.mapping = std::move(m);
      }
      return stage;
    };

    const std::string base = "layer" + std::to_string(li);
    if (layer.low_rank) {
      d.stages_[nu].push_back(map_matrix(layer.v, input_act, base + ".v"));
      d.stages_[nu].push_back(map_matrix(layer.u, trace.inner[nu], base + ".u"));
    } else {
      d.stages_[nu].push_back(map_matrix(layer.w, input_act, base + ".w"));
    }

    // dequantized effective weights become the deployment reference
    auto& ref_layer = d.reference_.nodes()[nu].layer;
    Rng deq_rng = make_rng(0);
    if (layer.low_rank) {
      ref_layer.v = std::visit(
          [&](const auto& m) { return quant::dequantize(m, d.pool_, quiet, deq_rng); },
          d.stages_[nu][0].mapping);
      ref_layer.u = std::visit(
          [&](const auto& m) { return quant::dequantize(m, d.pool_, quiet, deq_rng); },
          d.stages_[nu][1].mapping);
    } else {
      ref_layer.w = std::visit(
          [&](const auto& m) { return quant::dequantize(m, d.pool_, quiet, deq_rng); },
          d.stages_[nu][0].mapping);
    }
  }
  (void)quiet_rng;
  return d;
}

std::size_t DeployedNetwork::cell_count() const {
  std::size_t total = 0;
  for (const auto& stages : stages_)
    for (const auto& s : stages) total += s.cell_count();
  return total;
}

net::FieldNetwork::ValueMap DeployedNetwork::reference_forward(
    const net::FieldNetwork::ValueMap& in) const {
  return reference_.forward(in);
}

net::FieldNetwork::ValueMap DeployedNetwork::hw_forward(
    const net::FieldNetwork::ValueMap& in, Rng& rng) const {
  const auto& nodes = reference_.nodes();
  std::vector<Eigen::MatrixXd> value(nodes.size());

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    switch (n.kind) {
      case FieldNetwork::Node::Kind::Input: {
        auto it = in.find(n.name);
        if (it == in.end()) throw ConfigError("missing input group: " + n.name);
        value[i] = it->second;
        break;
      }
      case FieldNetwork::Node::Kind::Concat: {
        const auto& a = value[static_cast<std::size_t>(n.src)];
        const auto& b = value[static_cast<std::size_t>(n.src_b)];
        Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
        m.topRows(a.rows()) = a;
        m.bottomRows(b.rows()) = b;
        value[i] = std::move(m);
        break;
      }
      case FieldNetwork::Node::Kind::Encode: {
        value[i] = n.encoder->encode_batch(value[static_cast<std::size_t>(n.src)]);
        break;
      }
      case FieldNetwork::Node::Kind::Affine: {
        Eigen::MatrixXd z = value[static_cast<std::size_t>(n.src)];
        for (const auto& stage : stages_[i]) {
          z = std::visit(
              [&](const auto& m) {
                return quant::hw_matmul(m, pool_, z, stage.dac, noise_, rng);
              },
              stage.mapping);
        }
        z.colwise() += n.layer.bias;  // digital bias add
        value[i] = net::apply_activation(n.layer.act, z, n.layer.sine_omega);
        break;
      }
    }
  }

  net::FieldNetwork::ValueMap out;
  for (const auto& [name, node] : reference_.heads())
    out[name] = value[static_cast<std::size_t>(node)];
  return out;
}

}  // namespace memfield::deploy
