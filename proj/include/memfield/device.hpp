#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "memfield/common.hpp"

namespace memfield::device {

enum class CellState : std::uint8_t { Unformed = 0, Hrs = 1, Lrs = 2 };

/// Write/read noise of the resistive cells plus the systematic per-chain
/// gain error of the current-amplification circuit. All conductances in uS.
struct NoiseModel {
  double lrs_mean = 29.22;
  double lrs_std = 5.46;
  double hrs_mean = 2.0;
  double hrs_std = 0.6;
  double read_std_rel = 0.002;       // cycle-to-cycle, fraction of conductance
  double vcmac_gain_err_rel = 0.01;  // per-chain systematic gain error std
  std::uint64_t seed = 1;

  void validate() const;

  // Signed bit mapping: b = (g - bias) / scale, LRS -> +1, HRS -> -1.
  double bias_conductance() const { return 0.5 * (lrs_mean + hrs_mean); }
  double signed_scale() const { return 0.5 * (lrs_mean - hrs_mean); }
  // Binary bit mapping: b = (g - hrs_mean) / swing, LRS -> 1, HRS -> 0.
  double binary_swing() const { return lrs_mean - hrs_mean; }

  /// Defaults fitted to the measured set-operation distribution.
  static NoiseModel fitted(std::uint64_t seed = 1);
  static NoiseModel noiseless(std::uint64_t seed = 1);
  /// Same means, write stds scaled to the given relative spread on both states.
  NoiseModel with_write_rel(double rel) const;
};

/// One crossbar macro (or an exactly-sized slice of one). Cell conductances
/// and programmed states are updated together; reads never mutate them.
class CrossbarArray {
 public:
  static constexpr int kMaxRows = 512;
  static constexpr int kMaxCols = 512;

  CrossbarArray(int rows, int cols);

  int rows() const { return static_cast<int>(g_.rows()); }
  int cols() const { return static_cast<int>(g_.cols()); }

  double conductance(int row, int col) const;
  CellState state(int row, int col) const;
  int unformed_count() const { return unformed_; }

  /// Programs one cell to the target state, drawing from the write
  /// distribution. Returns the realized conductance.
  double program(int row, int col, CellState target, const NoiseModel& noise,
                 Rng& rng);
  /// Overwrites a cell with an explicit conductance (snapshot restore).
  void set_cell(int row, int col, double conductance, CellState state);

  const Eigen::MatrixXd& conductances() const { return g_; }

 private:
  void check_bounds(int row, int col) const;

  Eigen::MatrixXd g_;
  std::vector<CellState> state_;
  int unformed_ = 0;
};

/// Draws one programming outcome for the target state (clamped at 0).
double program_cell(CellState target, const NoiseModel& noise, Rng& rng);

/// Non-destructive read: stored conductance times (1 + eps),
/// eps ~ N(0, read_std_rel).
double read_cell(const CrossbarArray& array, int row, int col,
                 const NoiseModel& noise, Rng& rng);

/// DAC/ADC model: uniform mid-rise quantizers over the declared ranges,
/// saturating outside. bits == 0 means pass-through ("infinite" precision).
struct ConverterSpec {
  int dac_bits = 8;
  int adc_bits = 14;
  double in_lo = -1.0, in_hi = 1.0;
  double out_lo = -100.0, out_hi = 100.0;

  void validate() const;
  double dacq(double v) const;
  double adcq(double v) const;

  static ConverterSpec ideal();
};

/// Analog vector-matrix product over a rectangular block of the array:
/// out[c] = adcq( sum_r dacq(v_r) * read(g_rc) - bias * sum_r dacq(v_r) ).
/// The bias term realizes signed (or offset-binary) cell values digitally.
Eigen::VectorXd vmm_block(const CrossbarArray& array, int row0, int rows,
                          int col0, int cols, std::span<const double> input,
                          const ConverterSpec& conv, double bias_conductance,
                          const NoiseModel& noise, Rng& rng);

/// Whole-array VvM, requires length(input) == rows and a fully formed array.
Eigen::VectorXd vmm(const CrossbarArray& array, std::span<const double> input,
                    const ConverterSpec& conv, double bias_conductance,
                    const NoiseModel& noise, Rng& rng);

/// Forms every cell from the set-operation (LRS) distribution; the natural
/// randomness of forming is the entropy source for Gaussian encoding.
CrossbarArray form_random_matrix(int rows, int cols, const NoiseModel& noise,
                                 Rng& rng);

inline constexpr double kVcmacMinRatio = 1.1;
inline constexpr double kVcmacMaxRatio = 2.5;

/// One amplification chain: the nominal ratio plus its fixed gain error,
/// sampled once when the chain is calibrated.
struct VcmacChain {
  double s = 1.5;
  double gain_err = 0.0;  // gamma; effective per-stage gain is s*(1+gamma)

  static VcmacChain sample(double s, const NoiseModel& noise, Rng& rng);
};

/// Horner-style current aggregation, MSB first:
/// ((B0*se + B1)*se + ... + B_{n-1}) * (1/s)^{n-1} with se = s*(1+gamma).
/// With gamma = 0 this equals sum_i B_i * (1/s)^i exactly.
double vcmac_aggregate(std::span<const double> bit_currents_msb_first,
                       const VcmacChain& chain);
double vcmac_aggregate(std::span<const double> bit_currents_msb_first, double s,
                       const NoiseModel& noise, Rng& rng);

/// Conductance snapshot: "MEMX1" header + row-major little-endian f32,
/// with a JSON sidecar (<path>.meta.json) recording the noise model and seed.
void save_snapshot(const CrossbarArray& array, const NoiseModel& noise,
                   const std::string& path);
CrossbarArray load_snapshot(const std::string& path,
                            NoiseModel* noise_out = nullptr);

}  // namespace memfield::device
