#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "memfield/device.hpp"

namespace memfield::quant {

struct CellRef {
  int array_id = -1;
  int row = 0;
  int col = 0;
};

/// Owns crossbar tiles and hands out rectangular cell planes. A plane larger
/// than one macro is split into exactly-sized tiles; max_cells models the
/// macro budget ("insufficient free cells" when exceeded).
class ArrayPool {
 public:
  explicit ArrayPool(std::size_t max_cells = std::numeric_limits<std::size_t>::max(),
                     int tile_rows = device::CrossbarArray::kMaxRows,
                     int tile_cols = device::CrossbarArray::kMaxCols);

  struct PlaneTile {
    int array_id = -1;
    int row_off = 0, col_off = 0;  // position inside the logical plane
    int rows = 0, cols = 0;
  };
  struct Plane {
    int rows = 0, cols = 0;
    std::vector<PlaneTile> tiles;
  };

  Plane allocate_plane(int rows, int cols);

  device::CrossbarArray& array(int id) { return arrays_.at(static_cast<std::size_t>(id)); }
  const device::CrossbarArray& array(int id) const { return arrays_.at(static_cast<std::size_t>(id)); }
  int array_count() const { return static_cast<int>(arrays_.size()); }
  std::size_t cells_allocated() const { return cells_; }
  std::size_t max_cells() const { return max_cells_; }

  static CellRef locate(const Plane& plane, int row, int col);

 private:
  std::vector<device::CrossbarArray> arrays_;
  std::size_t cells_ = 0;
  std::size_t max_cells_;
  int tile_rows_, tile_cols_;
};

/// sig_i = prod_{j<=i} 1/(s*(1+gamma_j)), sig_0 = 1. With all gamma = 0 this
/// is (1/s)^i. The same significances drive read-back compensation and the
/// digital correction of the analog aggregation.
std::vector<double> calibrate_significances(double s,
                                            std::span<const double> gammas);
/// Digital factor that maps the raw chain output onto the calibrated
/// significances: 1 / prod(1 + gamma_j).
double chain_correction(std::span<const double> gammas);

struct HaqOptions {
  bool reread_previous = false;  // re-read earlier bits each iteration
  bool calibrate_chain = true;   // fold the sampled chain gain into sig_i
};

/// Multi-cell signed representation of one weight tensor:
/// w = tensor_scale * sum_i b_i * sig_i with b_i near +-1.
struct HaqMapping {
  std::string name;
  int out_dim = 0, in_dim = 0;  // logical weight matrix is out_dim x in_dim
  int bits = 0;                 // l
  double sig_ratio = 1.5;       // s
  double tensor_scale = 1.0;
  std::vector<ArrayPool::Plane> planes;  // planes[i] = bit i, MSB first, in x out
  std::vector<double> significances;     // size bits
  double chain_gain_err = 0.0;
  double chain_correction = 1.0;
  device::ConverterSpec adc = device::ConverterSpec::ideal();

  std::size_t cell_count() const {
    return static_cast<std::size_t>(bits) * out_dim * in_dim;
  }
  /// MSB-first cell list owned by one weight.
  std::vector<CellRef> cells_of(int out, int in) const;
};

/// Binary representation with per-tensor asymmetric uniform scale/zero-point:
/// w = scale * (sum_i b_i * 2^i - zero_point), b_i in {0, 1}.
struct PtqMapping {
  std::string name;
  int out_dim = 0, in_dim = 0;
  int bits = 0;
  double scale = 1.0;
  double zero_point = 0.0;
  std::vector<ArrayPool::Plane> planes;  // planes[i] = bit (bits-1-i), MSB first
  device::ConverterSpec adc = device::ConverterSpec::ideal();

  std::size_t cell_count() const {
    return static_cast<std::size_t>(bits) * out_dim * in_dim;
  }
};

/// Simultaneous quantize-and-program: per weight, bits are chosen greedily
/// from the sign of (programmed - target) after reading back each written
/// cell, so earlier write errors are compensated by later bits.
HaqMapping haq_program(const Eigen::MatrixXd& weights, int bits, double s,
                       ArrayPool& pool, const device::NoiseModel& noise,
                       Rng& rng, const HaqOptions& options = {},
                       const std::string& name = "");

/// Digital asymmetric uniform quantization programmed bit-by-bit with no
/// read-back.
PtqMapping ptq_program(const Eigen::MatrixXd& weights, int bits,
                       ArrayPool& pool, const device::NoiseModel& noise,
                       Rng& rng, const std::string& name = "");

/// Reads every cell once and reconstructs the effective weight matrix
/// (out_dim x in_dim).
Eigen::MatrixXd dequantize(const HaqMapping& mapping, const ArrayPool& pool,
                           const device::NoiseModel& noise, Rng& rng);
Eigen::MatrixXd dequantize(const PtqMapping& mapping, const ArrayPool& pool,
                           const device::NoiseModel& noise, Rng& rng);

/// Analog matmul: DAC inputs, per-bit-plane VMM (ADC'd per column), chain
/// aggregation across planes, digital rescale. Input is in_dim (or a batch
/// of columns); output is out_dim per input column.
Eigen::VectorXd hw_matmul(const HaqMapping& mapping, const ArrayPool& pool,
                          std::span<const double> input,
                          const device::ConverterSpec& dac,
                          const device::NoiseModel& noise, Rng& rng);
Eigen::MatrixXd hw_matmul(const HaqMapping& mapping, const ArrayPool& pool,
                          const Eigen::MatrixXd& inputs,
                          const device::ConverterSpec& dac,
                          const device::NoiseModel& noise, Rng& rng);

/// PTQ planes aggregate digitally with exact powers of two.
Eigen::VectorXd hw_matmul(const PtqMapping& mapping, const ArrayPool& pool,
                          std::span<const double> input,
                          const device::ConverterSpec& dac,
                          const device::NoiseModel& noise, Rng& rng);
Eigen::MatrixXd hw_matmul(const PtqMapping& mapping, const ArrayPool& pool,
                          const Eigen::MatrixXd& inputs,
                          const device::ConverterSpec& dac,
                          const device::NoiseModel& noise, Rng& rng);

/// Sets the mapping's ADC range from noiseless per-plane outputs on a
/// calibration batch (columns of `samples`), with a small margin.
void calibrate_adc(HaqMapping& mapping, const ArrayPool& pool,
                   const Eigen::MatrixXd& samples,
                   const device::ConverterSpec& dac, int adc_bits,
                   const device::NoiseModel& noise);
void calibrate_adc(PtqMapping& mapping, const ArrayPool& pool,
                   const Eigen::MatrixXd& samples,
                   const device::ConverterSpec& dac, int adc_bits,
                   const device::NoiseModel& noise);

/// Noiseless greedy quantization value (no device, exact +-1 bits); used for
/// error-bound sweeps. `scaled_target` must be in [-1, 1].
double haq_ideal_value(double scaled_target, int bits, double s);

/// Worst-case noiseless residual for s in (1, 2]: (1/s)^(l-1) * s / (s-1).
double haq_error_bound(int bits, double s);

/// Mapping manifest (structured text), lossless round-trip.
void save_mapping_manifest(const HaqMapping& mapping, const std::string& path,
                           const std::string& comment = "");
HaqMapping load_mapping_manifest(const std::string& path);
void save_mapping_manifest(const PtqMapping& mapping, const std::string& path,
                           const std::string& comment = "");

/// The matrix-multiplication accuracy experiment: random weights and inputs,
/// both methods programmed at the same cell budget, RMSE of the analog result
/// against the exact product.
struct MatmulBenchConfig {
  int length = 100;       // input vector length (rows of the plane)
  int outputs = 100;      // output columns
  int weight_bits = 12;
  int input_bits = 8;
  double s = 1.5;
  int seeds = 20;
  std::uint64_t base_seed = 1;
  device::NoiseModel noise = device::NoiseModel::fitted();
};

struct MatmulBenchResult {
  std::vector<double> haq_rmse;  // per seed
  std::vector<double> ptq_rmse;
  double haq_pooled = 0.0;
  double ptq_pooled = 0.0;
};

MatmulBenchResult run_matmul_bench(const MatmulBenchConfig& cfg);

}  // namespace memfield::quant
