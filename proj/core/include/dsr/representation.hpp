#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "dsr/neuron.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

// Spike representation of one layer: the scaled (weighted) firing rate of
// every neuron. Values lie in [0, bound].
struct Representation {
  std::vector<double> o;
  NeuronModel model = NeuronModel::IF;
  double bound = std::numeric_limits<double>::infinity();
};

// Normalized temporal weights lambda^(N-n) / sum_k lambda^(N-k), n = 1..N.
// lambda = 1 gives the plain mean.
std::vector<double> temporal_weights(std::size_t steps, double lambda);

// v_th * count / steps. Shared by the simulated and closed-form paths so that
// equal spike counts give bit-identical rates.
double scaled_rate(double v_th, std::size_t count, std::size_t steps);

// (v_th / N) * sum_n s[n], per neuron.
Representation rep_if(const SpikeTrain& s, double v_th);
// v_th * sum_n lambda^(N-n) s[n] / (dt * sum_n lambda^(N-n)), per neuron.
Representation rep_lif(const SpikeTrain& s, double v_th, double lambda, double dt);
// Representation of the network input frames [steps, width]: the time mean
// (IF) or the lambda-weighted time mean divided by dt (LIF). No threshold
// factor is applied to the input layer.
Representation rep_input(std::span<const double> frames, std::size_t steps, NeuronModel model,
                         double lambda = 1.0, double dt = 1.0);

// clamp(W z, 0, v_th). z is [in] or [B, in]; W is [out, in]; v_th is a
// single-element tensor and receives the bound gradient.
Tensor surrogate_map_if(const Tensor& z_prev, const Tensor& w, const Tensor& v_th);
// clamp(W z / tau, 0, v_th / dt).
Tensor surrogate_map_lif(const Tensor& z_prev, const Tensor& w, double tau, const Tensor& v_th,
                         double dt);

// Scaled IF firing rate under a constant input current. alpha = 1 uses the
// floor staircase, alpha = 0.5 the round-half-up staircase; any other alpha
// is simulated.
double closed_form_rate_if(double current, double v_th, std::size_t steps, double alpha);

// Representation reached by a single neuron driven by a constant current for
// `steps` steps (simulated, any model).
double constant_current_rate(const NeuronParams& p, double current, std::size_t steps);

// e_r = r(s) - g(mean current); e_q = (constant-current rate at the mean
// current) - g(mean current); e_d = e_r - e_q. g is the clamp map.
struct ErrorDecomposition {
  double e_r = 0.0;
  double e_q = 0.0;
  double e_d = 0.0;
};

// One decomposition per neuron. `currents` is laid out [steps, width] and must
// be the input that produced `s`.
std::vector<ErrorDecomposition> decompose_error(const SpikeTrain& s, std::span<const double> currents,
                                                const NeuronParams& p);

// Split of the final membrane potential into the part that cannot produce
// spikes (v_minus) and the remainder (v_plus). Diagnostic only; the
// representation bound argument assumes v_plus in [0, v_th].
struct MembraneSplit {
  double v_minus = 0.0;
  double v_plus = 0.0;
};

// For a single neuron: `currents` holds its per-step input, `final_v` its
// potential after the last step.
MembraneSplit split_membrane(std::span<const double> currents, double final_v, const NeuronParams& p);

// Alpha from `candidates` minimizing the mean |e_q| over `currents` at the
// given latency. Used to tune LIF neurons.
double best_alpha(NeuronParams p, std::size_t steps, std::span<const double> currents,
                  std::span<const double> candidates);

}  // namespace dsr
