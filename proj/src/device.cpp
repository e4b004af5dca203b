#include "memfield/device.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace memfield::device {

void NoiseModel::validate() const {
  if (!(lrs_mean > hrs_mean) || hrs_mean < 0)
    throw ConfigError("noise model requires lrs_mean > hrs_mean >= 0");
  if (lrs_std < 0 || hrs_std < 0)
    throw ConfigError("write noise stds must be >= 0");
  if (read_std_rel < 0 || read_std_rel >= 1)
    throw ConfigError("read_std_rel must be in [0, 1)");
  if (vcmac_gain_err_rel < 0 || vcmac_gain_err_rel >= 1)
    throw ConfigError("vcmac_gain_err_rel must be in [0, 1)");
}

NoiseModel NoiseModel::fitted(std::uint64_t seed) {
  NoiseModel n;
  n.seed = seed;
  return n;
}

NoiseModel NoiseModel::noiseless(std::uint64_t seed) {
  NoiseModel n;
  n.lrs_std = 0.0;
  n.hrs_std = 0.0;
  n.read_std_rel = 0.0;
  n.vcmac_gain_err_rel = 0.0;
  n.seed = seed;
  return n;
}

NoiseModel NoiseModel::with_write_rel(double rel) const {
  NoiseModel n = *this;
  n.lrs_std = rel * lrs_mean;
  n.hrs_std = rel * hrs_mean;
  return n;
}

CrossbarArray::CrossbarArray(int rows, int cols) {
  if (rows < 1 || cols < 1 || rows > kMaxRows || cols > kMaxCols)
    throw ConfigError("crossbar dims must be within 1.." +
                      std::to_string(kMaxRows) + " per macro");
  g_ = Eigen::MatrixXd::Zero(rows, cols);
  state_.assign(static_cast<std::size_t>(rows) * cols, CellState::Unformed);
  unformed_ = rows * cols;
}

void CrossbarArray::check_bounds(int row, int col) const {
  if (row < 0 || col < 0 || row >= rows() || col >= cols())
    throw StateError("cell index out of bounds");
}

double CrossbarArray::conductance(int row, int col) const {
  check_bounds(row, col);
  return g_(row, col);
}

CellState CrossbarArray::state(int row, int col) const {
  check_bounds(row, col);
  return state_[static_cast<std::size_t>(row) * cols() + col];
}

double CrossbarArray::program(int row, int col, CellState target,
                              const NoiseModel& noise, Rng& rng) {
  check_bounds(row, col);
  const double g = program_cell(target, noise, rng);
  auto& st = state_[static_cast<std::size_t>(row) * cols() + col];
  if (st == CellState::Unformed) --unformed_;
  st = target;
  g_(row, col) = g;
  return g;
}

void CrossbarArray::set_cell(int row, int col, double conductance,
                             CellState state) {
  check_bounds(row, col);
  auto& st = state_[static_cast<std::size_t>(row) * cols() + col];
  if (st == CellState::Unformed && state != CellState::Unformed) --unformed_;
  if (st != CellState::Unformed && state == CellState::Unformed) ++unformed_;
  st = state;
  g_(row, col) = conductance;
}

double program_cell(CellState target, const NoiseModel& noise, Rng& rng) {
  noise.validate();
  double mean, std;
  switch (target) {
    case CellState::Lrs:
      mean = noise.lrs_mean;
      std = noise.lrs_std;
      break;
    case CellState::Hrs:
      mean = noise.hrs_mean;
      std = noise.hrs_std;
      break;
    default:
      throw ConfigError("program target must be LRS or HRS");
  }
  double g = mean;
  if (std > 0) {
    std::normal_distribution<double> d(mean, std);
    g = d(rng);
  }
  return std::max(0.0, g);
}

double read_cell(const CrossbarArray& array, int row, int col,
                 const NoiseModel& noise, Rng& rng) {
  if (array.state(row, col) == CellState::Unformed)
    throw StateError("read of unformed cell");
  const double g = array.conductance(row, col);
  if (noise.read_std_rel <= 0) return g;
  std::normal_distribution<double> d(0.0, noise.read_std_rel);
  return g * (1.0 + d(rng));
}

void ConverterSpec::validate() const {
  if (dac_bits < 0 || dac_bits > 16)
    throw ConfigError("dac_bits must be in 0..16 (0 = pass-through)");
  if (adc_bits < 0 || adc_bits > 14)
    throw ConfigError("adc_bits must be in 0..14 (0 = pass-through)");
  if (!(in_lo < in_hi) || !(out_lo < out_hi))
    throw ConfigError("converter ranges must be non-empty");
}

namespace {

double quantize_midrise(double v, double lo, double hi, int bits) {
  if (bits == 0) return v;
  const double levels = static_cast<double>(1u << bits);
  const double step = (hi - lo) / levels;
  double idx = std::floor((v - lo) / step);
  idx = std::clamp(idx, 0.0, levels - 1.0);
  return lo + (idx + 0.5) * step;
}

}  // namespace

double ConverterSpec::dacq(double v) const {
  return quantize_midrise(v, in_lo, in_hi, dac_bits);
}

double ConverterSpec::adcq(double v) const {
  return quantize_midrise(v, out_lo, out_hi, adc_bits);
}

ConverterSpec ConverterSpec::ideal() {
  ConverterSpec c;
  c.dac_bits = 0;
  c.adc_bits = 0;
  return c;
}

Eigen::VectorXd vmm_block(const CrossbarArray& array, int row0, int rows,
                          int col0, int cols, std::span<const double> input,
                          const ConverterSpec& conv, double bias_conductance,
                          const NoiseModel& noise, Rng& rng) {
  conv.validate();
  if (static_cast<int>(input.size()) != rows)
    throw ConfigError("vmm input length does not match block rows");
  if (row0 < 0 || col0 < 0 || row0 + rows > array.rows() ||
      col0 + cols > array.cols() || rows < 1 || cols < 1)
    throw StateError("vmm block out of bounds");
  if (array.unformed_count() > 0) {
    for (int r = row0; r < row0 + rows; ++r)
      for (int c = col0; c < col0 + cols; ++c)
        if (array.state(r, c) == CellState::Unformed)
          throw StateError("vmm references unprogrammed cells");
  }

  Eigen::VectorXd v(rows);
  for (int r = 0; r < rows; ++r) v[r] = conv.dacq(input[r]);
  const double vsum = v.sum();

  const auto block = array.conductances().block(row0, col0, rows, cols);
  Eigen::VectorXd out(cols);
  if (noise.read_std_rel <= 0) {
    out = block.transpose() * v;
  } else {
    std::normal_distribution<double> d(0.0, noise.read_std_rel);
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < rows; ++r)
        acc += v[r] * block(r, c) * (1.0 + d(rng));
      out[c] = acc;
    }
  }
  for (int c = 0; c < cols; ++c)
    out[c] = conv.adcq(out[c] - bias_conductance * vsum);
  return out;
}

Eigen::VectorXd vmm(const CrossbarArray& array, std::span<const double> input,
                    const ConverterSpec& conv, double bias_conductance,
                    const NoiseModel& noise, Rng& rng) {
  return vmm_block(array, 0, array.rows(), 0, array.cols(), input, conv,
                   bias_conductance, noise, rng);
}

CrossbarArray form_random_matrix(int rows, int cols, const NoiseModel& noise,
                                 Rng& rng) {
  if (rows > CrossbarArray::kMaxRows || cols > CrossbarArray::kMaxCols)
    throw ConfigError("forming size exceeds macro; tile across arrays instead");
  CrossbarArray a(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) a.program(r, c, CellState::Lrs, noise, rng);
  return a;
}

VcmacChain VcmacChain::sample(double s, const NoiseModel& noise, Rng& rng) {
  if (s < kVcmacMinRatio || s > kVcmacMaxRatio)
    throw ConfigError("significance ratio outside supported 1.1..2.5 range");
  VcmacChain chain;
  chain.s = s;
  if (noise.vcmac_gain_err_rel > 0) {
    std::normal_distribution<double> d(0.0, noise.vcmac_gain_err_rel);
    chain.gain_err = d(rng);
  }
  return chain;
}

double vcmac_aggregate(std::span<const double> bit_currents_msb_first,
                       const VcmacChain& chain) {
  if (bit_currents_msb_first.empty())
    throw ConfigError("vcmac requires at least one bit current");
  if (chain.s < kVcmacMinRatio || chain.s > kVcmacMaxRatio)
    throw ConfigError("significance ratio outside supported 1.1..2.5 range");
  const double s_eff = chain.s * (1.0 + chain.gain_err);
  double acc = bit_currents_msb_first[0];
  for (std::size_t i = 1; i < bit_currents_msb_first.size(); ++i)
    acc = acc * s_eff + bit_currents_msb_first[i];
  const int n = static_cast<int>(bit_currents_msb_first.size());
  return acc * std::pow(1.0 / chain.s, n - 1);
}

double vcmac_aggregate(std::span<const double> bit_currents_msb_first, double s,
                       const NoiseModel& noise, Rng& rng) {
  return vcmac_aggregate(bit_currents_msb_first,
                         VcmacChain::sample(s, noise, rng));
}

namespace {

constexpr char kMagic[5] = {'M', 'E', 'M', 'X', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32le(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  write_u32(os, u);
}

float read_f32le(std::istream& is) {
  std::uint32_t u = read_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

char state_char(CellState s) {
  switch (s) {
    case CellState::Lrs: return 'L';
    case CellState::Hrs: return 'H';
    default: return 'U';
  }
}

CellState state_from_char(char c) {
  switch (c) {
    case 'L': return CellState::Lrs;
    case 'H': return CellState::Hrs;
    default: return CellState::Unformed;
  }
}

}  // namespace

void save_snapshot(const CrossbarArray& array, const NoiseModel& noise,
                   const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open snapshot for writing: " + path);
  os.write(kMagic, 5);
  const char pad[3] = {0, 0, 0};
  os.write(pad, 3);
  write_u32(os, static_cast<std::uint32_t>(array.rows()));
  write_u32(os, static_cast<std::uint32_t>(array.cols()));
  char units[8] = {'u', 'S', 0, 0, 0, 0, 0, 0};
  os.write(units, 8);
  for (int r = 0; r < array.rows(); ++r)
    for (int c = 0; c < array.cols(); ++c)
      write_f32le(os, static_cast<float>(array.conductance(r, c)));
  if (!os) throw DataError("snapshot write failed: " + path);

  nlohmann::json meta;
  meta["lrs_mean"] = noise.lrs_mean;
  meta["lrs_std"] = noise.lrs_std;
  meta["hrs_mean"] = noise.hrs_mean;
  meta["hrs_std"] = noise.hrs_std;
  meta["read_std_rel"] = noise.read_std_rel;
  meta["vcmac_gain_err_rel"] = noise.vcmac_gain_err_rel;
  meta["seed"] = noise.seed;
  std::string states;
  states.reserve(static_cast<std::size_t>(array.rows()) * array.cols());
  for (int r = 0; r < array.rows(); ++r)
    for (int c = 0; c < array.cols(); ++c)
      states.push_back(state_char(array.state(r, c)));
  meta["states"] = states;
  std::ofstream ms(path + ".meta.json");
  if (!ms) throw DataError("cannot open snapshot sidecar: " + path);
  ms << meta.dump(2) << "\n";
}

CrossbarArray load_snapshot(const std::string& path, NoiseModel* noise_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open snapshot: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw DataError("bad snapshot magic in " + path);
  char pad[3];
  is.read(pad, 3);
  const int rows = static_cast<int>(read_u32(is));
  const int cols = static_cast<int>(read_u32(is));
  char units[8];
  is.read(units, 8);
  if (rows < 1 || cols < 1 || rows > CrossbarArray::kMaxRows ||
      cols > CrossbarArray::kMaxCols)
    throw DataError("snapshot dims out of range in " + path);

  std::string states;
  NoiseModel noise;
  {
    std::ifstream ms(path + ".meta.json");
    if (!ms) throw DataError("missing snapshot sidecar for " + path);
    nlohmann::json meta = nlohmann::json::parse(ms, nullptr, true);
    noise.lrs_mean = meta.value("lrs_mean", noise.lrs_mean);
    noise.lrs_std = meta.value("lrs_std", noise.lrs_std);
    noise.hrs_mean = meta.value("hrs_mean", noise.hrs_mean);
    noise.hrs_std = meta.value("hrs_std", noise.hrs_std);
    noise.read_std_rel = meta.value("read_std_rel", noise.read_std_rel);
    noise.vcmac_gain_err_rel =
        meta.value("vcmac_gain_err_rel", noise.vcmac_gain_err_rel);
    noise.seed = meta.value("seed", noise.seed);
    states = meta.value("states", std::string());
  }
  if (states.size() != static_cast<std::size_t>(rows) * cols)
    throw DataError("snapshot sidecar state map size mismatch for " + path);

  CrossbarArray a(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double g = read_f32le(is);
      a.set_cell(r, c, g, state_from_char(states[static_cast<std::size_t>(r) * cols + c]));
    }
  if (!is) throw DataError("snapshot truncated: " + path);
  if (noise_out) *noise_out = noise;
  return a;
}

}  // namespace memfield::device
