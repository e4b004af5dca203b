#include "memfield/quant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace memfield::quant {

using device::CellState;
using device::ConverterSpec;
using device::CrossbarArray;
using device::NoiseModel;

ArrayPool::ArrayPool(std::size_t max_cells, int tile_rows, int tile_cols)
    : max_cells_(max_cells), tile_rows_(tile_rows), tile_cols_(tile_cols) {
  if (tile_rows_ < 1 || tile_rows_ > CrossbarArray::kMaxRows ||
      tile_cols_ < 1 || tile_cols_ > CrossbarArray::kMaxCols)
    throw ConfigError("tile dims exceed the macro size");
}

ArrayPool::Plane ArrayPool::allocate_plane(int rows, int cols) {
  if (rows < 1 || cols < 1) throw ConfigError("plane dims must be positive");
  const std::size_t need = static_cast<std::size_t>(rows) * cols;
  if (cells_ + need > max_cells_)
    throw ConfigError("insufficient free cells: need " + std::to_string(need) +
                      ", used " + std::to_string(cells_) + " of " +
                      std::to_string(max_cells_));
  Plane plane;
  plane.rows = rows;
  plane.cols = cols;
  for (int r0 = 0; r0 < rows; r0 += tile_rows_)
    for (int c0 = 0; c0 < cols; c0 += tile_cols_) {
      PlaneTile t;
      t.array_id = static_cast<int>(arrays_.size());
      t.row_off = r0;
      t.col_off = c0;
      t.rows = std::min(tile_rows_, rows - r0);
      t.cols = std::min(tile_cols_, cols - c0);
      arrays_.emplace_back(t.rows, t.cols);
      plane.tiles.push_back(t);
    }
  cells_ += need;
  return plane;
}

CellRef ArrayPool::locate(const Plane& plane, int row, int col) {
  for (const auto& t : plane.tiles) {
    if (row >= t.row_off && row < t.row_off + t.rows && col >= t.col_off &&
        col < t.col_off + t.cols)
      return CellRef{t.array_id, row - t.row_off, col - t.col_off};
  }
  throw StateError("plane coordinate out of range");
}

std::vector<double> calibrate_significances(double s,
                                            std::span<const double> gammas) {
  std::vector<double> sig(gammas.size() + 1);
  sig[0] = 1.0;
  for (std::size_t i = 0; i < gammas.size(); ++i)
    sig[i + 1] = sig[i] / (s * (1.0 + gammas[i]));
  return sig;
}

double chain_correction(std::span<const double> gammas) {
  double corr = 1.0;
  for (double g : gammas) corr /= (1.0 + g);
  return corr;
}

std::vector<CellRef> HaqMapping::cells_of(int out, int in) const {
  std::vector<CellRef> refs;
  refs.reserve(static_cast<std::size_t>(bits));
  for (const auto& plane : planes)
    refs.push_back(ArrayPool::locate(plane, in, out));
  return refs;
}

namespace {

double max_abs(const Eigen::MatrixXd& w) {
  const double m = w.size() ? w.cwiseAbs().maxCoeff() : 0.0;
  return m > 0 ? m : 1.0;
}

}  // namespace

HaqMapping haq_program(const Eigen::MatrixXd& weights, int bits, double s,
                       ArrayPool& pool, const NoiseModel& noise, Rng& rng,
                       const HaqOptions& options, const std::string& name) {
  noise.validate();
  if (bits < 1) throw ConfigError("haq bit width must be >= 1");
  if (!(s > 1.0) || s > device::kVcmacMaxRatio)
    throw ConfigError("significance ratio must satisfy 1 < s <= 2.5");
  if (weights.size() == 0) throw ConfigError("empty weight tensor");

  HaqMapping m;
  m.name = name;
  m.out_dim = static_cast<int>(weights.rows());
  m.in_dim = static_cast<int>(weights.cols());
  m.bits = bits;
  m.sig_ratio = s;
  m.tensor_scale = max_abs(weights);

  // One chain per tensor; its systematic gain error is sampled once and then
  // measured, exactly like the calibration step on the platform.
  if (noise.vcmac_gain_err_rel > 0) {
    std::normal_distribution<double> d(0.0, noise.vcmac_gain_err_rel);
    m.chain_gain_err = d(rng);
  }
  std::vector<double> gammas(static_cast<std::size_t>(bits > 0 ? bits - 1 : 0),
                             options.calibrate_chain ? m.chain_gain_err : 0.0);
  m.significances = calibrate_significances(s, gammas);
  std::vector<double> true_gammas(gammas.size(), m.chain_gain_err);
  m.chain_correction =
      options.calibrate_chain ? chain_correction(true_gammas) : 1.0;

  m.planes.reserve(static_cast<std::size_t>(bits));
  for (int i = 0; i < bits; ++i)
    m.planes.push_back(pool.allocate_plane(m.in_dim, m.out_dim));

  const double bias = noise.bias_conductance();
  const double scale = noise.signed_scale();

  std::vector<CellRef> refs(static_cast<std::size_t>(bits));
  std::vector<double> bit_values(static_cast<std::size_t>(bits));
  for (int r = 0; r < m.in_dim; ++r) {
    for (int c = 0; c < m.out_dim; ++c) {
      const double target = weights(c, r) / m.tensor_scale;
      double programmed = 0.0;
      for (int i = 0; i < bits; ++i) {
        // First bit keys on the sign of the target (zero counts as positive);
        // later bits key on the sign of the running error, delta >= 0 -> HRS.
        const bool set_lrs =
            (i == 0) ? (target >= 0.0) : (programmed - target < 0.0);
        refs[static_cast<std::size_t>(i)] = ArrayPool::locate(m.planes[static_cast<std::size_t>(i)], r, c);
        const auto& ref = refs[static_cast<std::size_t>(i)];
        auto& arr = pool.array(ref.array_id);
        arr.program(ref.row, ref.col, set_lrs ? CellState::Lrs : CellState::Hrs,
                    noise, rng);
        const double g = device::read_cell(arr, ref.row, ref.col, noise, rng);
        bit_values[static_cast<std::size_t>(i)] = (g - bias) / scale;
        if (options.reread_previous) {
          programmed = 0.0;
          for (int j = 0; j <= i; ++j) {
            const auto& rj = refs[static_cast<std::size_t>(j)];
            const double gj =
                device::read_cell(pool.array(rj.array_id), rj.row, rj.col, noise, rng);
            programmed += (gj - bias) / scale * m.significances[static_cast<std::size_t>(j)];
          }
        } else {
          programmed += bit_values[static_cast<std::size_t>(i)] * m.significances[static_cast<std::size_t>(i)];
        }
      }
    }
  }
  return m;
}

PtqMapping ptq_program(const Eigen::MatrixXd& weights, int bits,
                       ArrayPool& pool, const NoiseModel& noise, Rng& rng,
                       const std::string& name) {
  noise.validate();
  if (bits < 1 || bits > 16) throw ConfigError("ptq bit width must be in 1..16");
  if (weights.size() == 0) throw ConfigError("empty weight tensor");

  PtqMapping m;
  m.name = name;
  m.out_dim = static_cast<int>(weights.rows());
  m.in_dim = static_cast<int>(weights.cols());
  m.bits = bits;

  const double w_min = weights.minCoeff();
  const double w_max = weights.maxCoeff();
  const double qmax = static_cast<double>((1u << bits) - 1);
  m.scale = (w_max > w_min) ? (w_max - w_min) / qmax : 1.0;
  m.zero_point = std::clamp(std::round(-w_min / m.scale), 0.0, qmax);

  m.planes.reserve(static_cast<std::size_t>(bits));
  for (int i = 0; i < bits; ++i)
    m.planes.push_back(pool.allocate_plane(m.in_dim, m.out_dim));

  for (int r = 0; r < m.in_dim; ++r) {
    for (int c = 0; c < m.out_dim; ++c) {
      const double w = weights(c, r);
      const double q =
          std::clamp(std::round(w / m.scale) + m.zero_point, 0.0, qmax);
      const auto code = static_cast<std::uint32_t>(q);
      for (int i = 0; i < bits; ++i) {
        const int bit_index = bits - 1 - i;  // planes are MSB first
        const bool one = (code >> bit_index) & 1u;
        const auto ref = ArrayPool::locate(m.planes[static_cast<std::size_t>(i)], r, c);
        pool.array(ref.array_id)
            .program(ref.row, ref.col, one ? CellState::Lrs : CellState::Hrs,
                     noise, rng);
      }
    }
  }
  return m;
}

Eigen::MatrixXd dequantize(const HaqMapping& m, const ArrayPool& pool,
                           const NoiseModel& noise, Rng& rng) {
  const double bias = noise.bias_conductance();
  const double scale = noise.signed_scale();
  Eigen::MatrixXd w(m.out_dim, m.in_dim);
  for (int r = 0; r < m.in_dim; ++r)
    for (int c = 0; c < m.out_dim; ++c) {
      double acc = 0.0;
      for (int i = 0; i < m.bits; ++i) {
        const auto ref = ArrayPool::locate(m.planes[static_cast<std::size_t>(i)], r, c);
        const double g =
            device::read_cell(pool.array(ref.array_id), ref.row, ref.col, noise, rng);
        acc += (g - bias) / scale * m.significances[static_cast<std::size_t>(i)];
      }
      w(c, r) = acc * m.tensor_scale;
    }
  return w;
}

Eigen::MatrixXd dequantize(const PtqMapping& m, const ArrayPool& pool,
                           const NoiseModel& noise, Rng& rng) {
  const double hrs = noise.hrs_mean;
  const double swing = noise.binary_swing();
  Eigen::MatrixXd w(m.out_dim, m.in_dim);
  for (int r = 0; r < m.in_dim; ++r)
    for (int c = 0; c < m.out_dim; ++c) {
      double q = 0.0;
      for (int i = 0; i < m.bits; ++i) {
        const auto ref = ArrayPool::locate(m.planes[static_cast<std::size_t>(i)], r, c);
        const double g =
            device::read_cell(pool.array(ref.array_id), ref.row, ref.col, noise, rng);
        q += (g - hrs) / swing * std::pow(2.0, m.bits - 1 - i);
      }
      w(c, r) = m.scale * (q - m.zero_point);
    }
  return w;
}

namespace {

// Per-plane analog product with digital accumulation of tile partial sums.
Eigen::VectorXd plane_vmm(const ArrayPool::Plane& plane, const ArrayPool& pool,
                          std::span<const double> input,
                          const ConverterSpec& conv, double bias,
                          const NoiseModel& noise, Rng& rng) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(plane.cols);
  for (const auto& t : plane.tiles) {
    std::span<const double> slice(input.data() + t.row_off, static_cast<std::size_t>(t.rows));
    const auto part = device::vmm(pool.array(t.array_id), slice, conv, bias, noise, rng);
    out.segment(t.col_off, t.cols) += part;
  }
  return out;
}

ConverterSpec merge_dac_adc(const ConverterSpec& dac, const ConverterSpec& adc) {
  ConverterSpec c = adc;
  c.dac_bits = dac.dac_bits;
  c.in_lo = dac.in_lo;
  c.in_hi = dac.in_hi;
  return c;
}

}  // namespace

Eigen::VectorXd hw_matmul(const HaqMapping& m, const ArrayPool& pool,
                          std::span<const double> input,
                          const ConverterSpec& dac, const NoiseModel& noise,
                          Rng& rng) {
  if (static_cast<int>(input.size()) != m.in_dim)
    throw ConfigError("hw_matmul input length mismatch");
  // The chain combines per-plane currents in the analog domain; only the
  // aggregated current is digitized.
  ConverterSpec conv = merge_dac_adc(dac, m.adc);
  conv.adc_bits = 0;
  const double bias = noise.bias_conductance();

  Eigen::MatrixXd plane_out(m.bits, m.out_dim);
  for (int i = 0; i < m.bits; ++i)
    plane_out.row(i) =
        plane_vmm(m.planes[static_cast<std::size_t>(i)], pool, input, conv, bias, noise, rng).transpose();

  const device::VcmacChain chain{m.sig_ratio, m.chain_gain_err};
  const double post =
      m.chain_correction * m.tensor_scale / noise.signed_scale();
  Eigen::VectorXd out(m.out_dim);
  std::vector<double> currents(static_cast<std::size_t>(m.bits));
  for (int c = 0; c < m.out_dim; ++c) {
    for (int i = 0; i < m.bits; ++i) currents[static_cast<std::size_t>(i)] = plane_out(i, c);
    out[c] = m.adc.adcq(device::vcmac_aggregate(currents, chain)) * post;
  }
  return out;
}

Eigen::MatrixXd hw_matmul(const HaqMapping& m, const ArrayPool& pool,
                          const Eigen::MatrixXd& inputs,
                          const ConverterSpec& dac, const NoiseModel& noise,
                          Rng& rng) {
  Eigen::MatrixXd out(m.out_dim, inputs.cols());
  std::vector<double> col(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index k = 0; k < inputs.cols(); ++k) {
    Eigen::Map<Eigen::VectorXd>(col.data(), inputs.rows()) = inputs.col(k);
    out.col(k) = hw_matmul(m, pool, col, dac, noise, rng);
  }
  return out;
}

Eigen::VectorXd hw_matmul(const PtqMapping& m, const ArrayPool& pool,
                          std::span<const double> input,
                          const ConverterSpec& dac, const NoiseModel& noise,
                          Rng& rng) {
  if (static_cast<int>(input.size()) != m.in_dim)
    throw ConfigError("hw_matmul input length mismatch");
  const ConverterSpec conv = merge_dac_adc(dac, m.adc);
  const double swing = noise.binary_swing();

  double vsum = 0.0;
  for (double v : input) vsum += conv.dacq(v);

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(m.out_dim);
  for (int i = 0; i < m.bits; ++i) {
    const auto plane =
        plane_vmm(m.planes[static_cast<std::size_t>(i)], pool, input, conv, noise.hrs_mean, noise, rng);
    acc += plane * std::pow(2.0, m.bits - 1 - i);
  }
  return m.scale * (acc / swing - Eigen::VectorXd::Constant(m.out_dim, m.zero_point * vsum));
}

Eigen::MatrixXd hw_matmul(const PtqMapping& m, const ArrayPool& pool,
                          const Eigen::MatrixXd& inputs,
                          const ConverterSpec& dac, const NoiseModel& noise,
                          Rng& rng) {
  Eigen::MatrixXd out(m.out_dim, inputs.cols());
  std::vector<double> col(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index k = 0; k < inputs.cols(); ++k) {
    Eigen::Map<Eigen::VectorXd>(col.data(), inputs.rows()) = inputs.col(k);
    out.col(k) = hw_matmul(m, pool, col, dac, noise, rng);
  }
  return out;
}

void calibrate_adc(HaqMapping& m, const ArrayPool& pool,
                   const Eigen::MatrixXd& samples, const ConverterSpec& dac,
                   int adc_bits, const NoiseModel& noise) {
  // The converter sees the chain-aggregated current, so the range is
  // calibrated on noiseless aggregated outputs.
  if (samples.rows() != m.in_dim)
    throw ConfigError("calibration batch dimension mismatch");
  NoiseModel quiet = noise;
  quiet.read_std_rel = 0.0;
  ConverterSpec probe = dac;
  probe.adc_bits = 0;
  Rng dummy = make_rng(0);
  const device::VcmacChain chain{m.sig_ratio, m.chain_gain_err};

  double lo = std::numeric_limits<double>::max();
  double hi = std::numeric_limits<double>::lowest();
  std::vector<double> col(static_cast<std::size_t>(samples.rows()));
  std::vector<double> currents(static_cast<std::size_t>(m.bits));
  Eigen::MatrixXd plane_out(m.bits, m.out_dim);
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    Eigen::Map<Eigen::VectorXd>(col.data(), samples.rows()) = samples.col(k);
    for (int i = 0; i < m.bits; ++i)
      plane_out.row(i) = plane_vmm(m.planes[static_cast<std::size_t>(i)], pool, col, probe,
                                   noise.bias_conductance(), quiet, dummy)
                             .transpose();
    for (int c = 0; c < m.out_dim; ++c) {
      for (int i = 0; i < m.bits; ++i) currents[static_cast<std::size_t>(i)] = plane_out(i, c);
      const double agg = device::vcmac_aggregate(currents, chain);
      lo = std::min(lo, agg);
      hi = std::max(hi, agg);
    }
  }
  // Clipping a tail current is far costlier than a coarser step, so the
  // measured span gets a wide guard band.
  const double span = std::max(hi - lo, 1e-9);
  m.adc.adc_bits = adc_bits;
  m.adc.out_lo = lo - 0.5 * span;
  m.adc.out_hi = hi + 0.5 * span;
}

void calibrate_adc(PtqMapping& m, const ArrayPool& pool,
                   const Eigen::MatrixXd& samples, const ConverterSpec& dac,
                   int adc_bits, const NoiseModel& noise) {
  // Direct mapping digitizes every bit plane on its own.
  if (samples.rows() != m.in_dim)
    throw ConfigError("calibration batch dimension mismatch");
  NoiseModel quiet = noise;
  quiet.read_std_rel = 0.0;
  ConverterSpec probe = dac;
  probe.adc_bits = 0;
  Rng dummy = make_rng(0);

  double lo = std::numeric_limits<double>::max();
  double hi = std::numeric_limits<double>::lowest();
  std::vector<double> col(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index k = 0; k < samples.cols(); ++k) {
    Eigen::Map<Eigen::VectorXd>(col.data(), samples.rows()) = samples.col(k);
    for (const auto& plane : m.planes) {
      const auto out = plane_vmm(plane, pool, col, probe, noise.hrs_mean, quiet, dummy);
      lo = std::min(lo, out.minCoeff());
      hi = std::max(hi, out.maxCoeff());
    }
  }
  const double span = std::max(hi - lo, 1e-9);
  m.adc.adc_bits = adc_bits;
  m.adc.out_lo = lo - 0.05 * span;
  m.adc.out_hi = hi + 0.05 * span;
}

double haq_ideal_value(double scaled_target, int bits, double s) {
  double programmed = 0.0;
  double sig = 1.0;
  for (int i = 0; i < bits; ++i) {
    const bool set_lrs =
        (i == 0) ? (scaled_target >= 0.0) : (programmed - scaled_target < 0.0);
    programmed += (set_lrs ? 1.0 : -1.0) * sig;
    sig /= s;
  }
  return programmed;
}

double haq_error_bound(int bits, double s) {
  return std::pow(1.0 / s, bits - 1) * s / (s - 1.0);
}

namespace {

nlohmann::json plane_to_json(const ArrayPool::Plane& p) {
  nlohmann::json j;
  j["rows"] = p.rows;
  j["cols"] = p.cols;
  j["tiles"] = nlohmann::json::array();
  for (const auto& t : p.tiles)
    j["tiles"].push_back({{"array_id", t.array_id},
                          {"row_off", t.row_off},
                          {"col_off", t.col_off},
                          {"rows", t.rows},
                          {"cols", t.cols}});
  return j;
}

ArrayPool::Plane plane_from_json(const nlohmann::json& j) {
  ArrayPool::Plane p;
  p.rows = j.at("rows").get<int>();
  p.cols = j.at("cols").get<int>();
  for (const auto& tj : j.at("tiles")) {
    ArrayPool::PlaneTile t;
    t.array_id = tj.at("array_id").get<int>();
    t.row_off = tj.at("row_off").get<int>();
    t.col_off = tj.at("col_off").get<int>();
    t.rows = tj.at("rows").get<int>();
    t.cols = tj.at("cols").get<int>();
    p.tiles.push_back(t);
  }
  return p;
}

}  // namespace

void save_mapping_manifest(const HaqMapping& m, const std::string& path,
                           const std::string& comment) {
  nlohmann::json j;
  if (!comment.empty()) j["comment"] = comment;
  j["tensor"] = m.name;
  j["out_dim"] = m.out_dim;
  j["in_dim"] = m.in_dim;
  j["bits"] = m.bits;
  j["sig_ratio"] = m.sig_ratio;
  j["tensor_scale"] = m.tensor_scale;
  j["significances"] = m.significances;
  j["chain_gain_err"] = m.chain_gain_err;
  j["chain_correction"] = m.chain_correction;
  j["adc"] = {{"dac_bits", m.adc.dac_bits}, {"adc_bits", m.adc.adc_bits},
              {"in_lo", m.adc.in_lo},       {"in_hi", m.adc.in_hi},
              {"out_lo", m.adc.out_lo},     {"out_hi", m.adc.out_hi}};
  j["planes"] = nlohmann::json::array();
  for (const auto& p : m.planes) j["planes"].push_back(plane_to_json(p));
  std::ofstream os(path);
  if (!os) throw DataError("cannot write mapping manifest: " + path);
  os << j.dump(2) << "\n";
}

HaqMapping load_mapping_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open mapping manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  HaqMapping m;
  m.name = j.at("tensor").get<std::string>();
  m.out_dim = j.at("out_dim").get<int>();
  m.in_dim = j.at("in_dim").get<int>();
  m.bits = j.at("bits").get<int>();
  m.sig_ratio = j.at("sig_ratio").get<double>();
  m.tensor_scale = j.at("tensor_scale").get<double>();
  m.significances = j.at("significances").get<std::vector<double>>();
  m.chain_gain_err = j.at("chain_gain_err").get<double>();
  m.chain_correction = j.at("chain_correction").get<double>();
  const auto& a = j.at("adc");
  m.adc.dac_bits = a.at("dac_bits").get<int>();
  m.adc.adc_bits = a.at("adc_bits").get<int>();
  m.adc.in_lo = a.at("in_lo").get<double>();
  m.adc.in_hi = a.at("in_hi").get<double>();
  m.adc.out_lo = a.at("out_lo").get<double>();
  m.adc.out_hi = a.at("out_hi").get<double>();
  for (const auto& pj : j.at("planes")) m.planes.push_back(plane_from_json(pj));
  return m;
}

void save_mapping_manifest(const PtqMapping& m, const std::string& path,
                           const std::string& comment) {
  nlohmann::json j;
  if (!comment.empty()) j["comment"] = comment;
  j["tensor"] = m.name;
  j["out_dim"] = m.out_dim;
  j["in_dim"] = m.in_dim;
  j["bits"] = m.bits;
  j["scale"] = m.scale;
  j["zero_point"] = m.zero_point;
  j["adc"] = {{"dac_bits", m.adc.dac_bits}, {"adc_bits", m.adc.adc_bits},
              {"in_lo", m.adc.in_lo},       {"in_hi", m.adc.in_hi},
              {"out_lo", m.adc.out_lo},     {"out_hi", m.adc.out_hi}};
  j["planes"] = nlohmann::json::array();
  for (const auto& p : m.planes) j["planes"].push_back(plane_to_json(p));
  std::ofstream os(path);
  if (!os) throw DataError("cannot write mapping manifest: " + path);
  os << j.dump(2) << "\n";
}

MatmulBenchResult run_matmul_bench(const MatmulBenchConfig& cfg) {
  MatmulBenchResult res;
  double haq_sq = 0.0, ptq_sq = 0.0;
  std::size_t count = 0;

  for (int seed = 0; seed < cfg.seeds; ++seed) {
    Rng data_rng = make_rng(cfg.base_seed + static_cast<std::uint64_t>(seed), 100);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd w(cfg.outputs, cfg.length);
    for (int r = 0; r < cfg.outputs; ++r)
      for (int c = 0; c < cfg.length; ++c) w(r, c) = u(data_rng);
    Eigen::VectorXd x(cfg.length);
    for (int r = 0; r < cfg.length; ++r) x[r] = u(data_rng);

    Eigen::MatrixXd probe(cfg.length, 8);
    for (int r = 0; r < cfg.length; ++r)
      for (int c = 0; c < 8; ++c) probe(r, c) = u(data_rng);

    ConverterSpec dac;
    dac.dac_bits = cfg.input_bits;
    dac.in_lo = -1.0;
    dac.in_hi = 1.0;

    const Eigen::VectorXd exact = w * x;
    std::vector<double> xv(static_cast<std::size_t>(cfg.length));
    Eigen::Map<Eigen::VectorXd>(xv.data(), cfg.length) = x;

    Rng dev_rng = make_rng(cfg.base_seed + static_cast<std::uint64_t>(seed), 200);
    ArrayPool haq_pool;
    auto haq = haq_program(w, cfg.weight_bits, cfg.s, haq_pool, cfg.noise,
                           dev_rng, {}, "bench");
    calibrate_adc(haq, haq_pool, probe, dac, 14, cfg.noise);
    const Eigen::VectorXd haq_out =
        hw_matmul(haq, haq_pool, xv, dac, cfg.noise, dev_rng);

    ArrayPool ptq_pool;
    auto ptq = ptq_program(w, cfg.weight_bits, ptq_pool, cfg.noise, dev_rng,
                           "bench");
    calibrate_adc(ptq, ptq_pool, probe, dac, 14, cfg.noise);
    const Eigen::VectorXd ptq_out =
        hw_matmul(ptq, ptq_pool, xv, dac, cfg.noise, dev_rng);

    const double h = std::sqrt((haq_out - exact).squaredNorm() / cfg.outputs);
    const double p = std::sqrt((ptq_out - exact).squaredNorm() / cfg.outputs);
    res.haq_rmse.push_back(h);
    res.ptq_rmse.push_back(p);
    haq_sq += (haq_out - exact).squaredNorm();
    ptq_sq += (ptq_out - exact).squaredNorm();
    count += static_cast<std::size_t>(cfg.outputs);
  }
  res.haq_pooled = std::sqrt(haq_sq / static_cast<double>(count));
  res.ptq_pooled = std::sqrt(ptq_sq / static_cast<double>(count));
  return res;
}

}  // namespace memfield::quant
