#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsr/data.hpp"
#include "dsr/network.hpp"

namespace dsr {

// Symmetric per-tensor weight quantization.
struct QuantSpec {
  int bits = 8;
  void validate() const;
};

// max|w| / (2^(bits-1) - 1); 0 for an all-zero tensor.
double quant_scale(std::span<const double> w, int bits);
// round(w / s) * s elementwise, in place.
void quantize_values(std::span<double> w, int bits);
// Copy of `net` with every weight tensor quantized. Biases, thresholds and
// batch norm parameters keep full precision.
Network quantize_weights(const Network& net, const QuantSpec& spec);

// Mean spike probability of every spiking layer over neurons, steps and samples.
std::vector<double> firing_rate_report(Network& net, const Dataset& data, std::size_t steps);

// Plot-ready table: named columns, one row per grid point.
struct SweepResult {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);
  std::size_t column(const std::string& name) const;
  std::vector<double> values(const std::string& name) const;
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

// Evenly spaced grid of `points` values over [lo, hi].
std::vector<double> linear_grid(double lo, double hi, std::size_t points);

// Columns: current, simulated, closed_form, clamp, e_q. `simulated` is the
// constant-current IF rate from the neuron simulation, `closed_form` the
// staircase formula and `clamp` the reference clamp(I, 0, v_th).
SweepResult sweep_staircase(double v_th, std::size_t steps, double alpha, std::span<const double> currents);

// Random dense IF network for the convergence study.
struct ConvergenceSpec {
  std::vector<std::size_t> widths{16, 16, 8};  // input, hidden..., output
  NeuronParams neuron{NeuronModel::IF, 1.0, 1.0, 0.05, 1.0};
  double input_lo = 0.0;
  double input_hi = 1.0;
  std::size_t samples = 8;
};

// Columns: steps, err_1 .. err_L (max over neurons and samples of
// |a^i[N] - z^i|), err_max. Weights ~ N(0, 1/fan_in); inputs are constant.
SweepResult sweep_convergence(const ConvergenceSpec& spec, std::span<const std::size_t> steps_list,
                              std::uint64_t seed);

// Single neuron under constant currents. Columns: steps, max_err, where
// max_err is the largest |representation - clamp map| over `currents`.
SweepResult sweep_single_neuron(const NeuronParams& p, std::span<const double> currents,
                                std::span<const std::size_t> steps_list);

// Smallest c >= 0 such that err(N) <= offset + c / N holds on every row.
// Rows use the columns of sweep_single_neuron.
double fit_inverse_bound(const SweepResult& single, double offset);

// Error decomposition under noisy currents I[n] = mean + noise * u[n] with
// u ~ U(-1, 1). Columns: mean_current, noise, e_r, e_q, e_d.
SweepResult sweep_decomposition(const NeuronParams& p, std::size_t steps, std::span<const double> means,
                                std::span<const double> noise_levels, std::uint64_t seed);

}  // namespace dsr
