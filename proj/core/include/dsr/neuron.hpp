#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dsr {

enum class NeuronModel { IF, LIF };

std::string to_string(NeuronModel model);
NeuronModel parse_neuron_model(const std::string& name);

// Per-layer spiking parameters. Potentials use V_rest = V[0] = 0, so the
// threshold must be positive. tau and dt only matter for LIF.
struct NeuronParams {
  NeuronModel model = NeuronModel::IF;
  double v_th = 1.0;
  double tau = 1.0;
  double dt = 0.05;
  double alpha = 1.0;  // fire when U >= alpha * v_th

  // exp(-dt / tau); 1 for IF (no leak).
  double lambda() const;
  // Upper end of the representation range: v_th (IF) or v_th / dt (LIF).
  double bound() const;
  // Throws ParameterError when an invariant is violated.
  void validate() const;

  static NeuronParams if_default();
  // LIF settings keyed by latency; N outside the table uses the nearest row.
  static NeuronParams lif_for_steps(std::size_t steps);
};

// Default firing hyperparameter: 0.5 for IF, the LIF table value otherwise.
double default_alpha(NeuronModel model, std::size_t steps);
// Lower bound kept on trainable thresholds: 0.01 for IF, the LIF table value otherwise.
double default_threshold_floor(NeuronModel model, std::size_t steps);

struct NeuronState {
  std::vector<double> v;  // potential after reset
  std::vector<double> u;  // potential before reset, last step

  static NeuronState zeros(std::size_t width);
  std::size_t width() const { return v.size(); }
};

// Binary train laid out [steps, width].
struct SpikeTrain {
  std::size_t steps = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  SpikeTrain() = default;
  SpikeTrain(std::size_t steps, std::size_t width);

  std::uint8_t at(std::size_t step, std::size_t neuron) const { return bits[step * width + neuron]; }
  std::span<const std::uint8_t> step(std::size_t n) const;
  std::span<std::uint8_t> step(std::size_t n);
  // Spikes emitted by one neuron over the whole train.
  std::size_t count(std::size_t neuron) const;
  std::size_t total() const;
};

// One discrete update for every neuron, in place:
//   U = f(V, I);  s = [U >= alpha * v_th];  V = U - v_th * s
// with f(V, I) = V + I (IF) or lambda * V + (1 - lambda) * I (LIF).
void advance(NeuronState& state, std::span<const double> current, const NeuronParams& p,
             std::span<std::uint8_t> spikes);

struct StepResult {
  NeuronState state;
  std::vector<std::uint8_t> spikes;
};

StepResult if_step(const NeuronState& state, std::span<const double> current, const NeuronParams& p);
StepResult lif_step(const NeuronState& state, std::span<const double> current, const NeuronParams& p);

struct LayerSimulation {
  SpikeTrain spikes;
  NeuronState final_state;
};

// Runs `steps` consecutive updates. `currents` is laid out [steps, width].
LayerSimulation simulate_layer(const NeuronState& initial, std::span<const double> currents,
                               std::size_t steps, const NeuronParams& p);

}  // namespace dsr
