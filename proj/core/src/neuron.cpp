#include "dsr/neuron.hpp"

#include <cmath>

#include "dsr/errors.hpp"

namespace dsr {

namespace {

// Initial threshold, threshold floor, dt and alpha for LIF at a given latency.
struct LifRow {
  std::size_t steps;
  double v_th;
  double floor;
  double dt;
  double alpha;
};

constexpr LifRow kLifTable[] = {
    {20, 0.3, 0.0005, 0.05, 0.3},
    {15, 0.3, 0.0005, 0.05, 0.4},
    {10, 0.3, 0.0005, 0.05, 0.4},
    {5, 0.6, 0.001, 0.1, 0.5},
};

const LifRow& lif_row(std::size_t steps) {
  const LifRow* best = &kLifTable[0];
  std::size_t best_gap = static_cast<std::size_t>(-1);
  for (const auto& row : kLifTable) {
    const std::size_t gap = row.steps > steps ? row.steps - steps : steps - row.steps;
    if (gap < best_gap) {
      best_gap = gap;
      best = &row;
    }
  }
  return *best;
}

}  // namespace

std::string to_string(NeuronModel model) { return model == NeuronModel::IF ? "if" : "lif"; }

NeuronModel parse_neuron_model(const std::string& name) {
  if (name == "if" || name == "IF") return NeuronModel::IF;
  if (name == "lif" || name == "LIF") return NeuronModel::LIF;
  throw ParameterError("unknown neuron model '" + name + "' (expected if or lif)");
}

double NeuronParams::lambda() const {
  return model == NeuronModel::LIF ? std::exp(-dt / tau) : 1.0;
}

double NeuronParams::bound() const { return model == NeuronModel::LIF ? v_th / dt : v_th; }

void NeuronParams::validate() const {
  if (!(v_th > 0.0)) throw ParameterError("threshold must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
  if (model == NeuronModel::LIF) {
    if (!(tau > 0.0) || !(dt > 0.0)) throw ParameterError("LIF tau and dt must be positive");
    if (!(dt < tau)) throw ParameterError("LIF discretization requires dt < tau");
  }
}

NeuronParams NeuronParams::if_default() {
  NeuronParams p;
  p.model = NeuronModel::IF;
  p.v_th = 6.0;
  p.alpha = 0.5;
  return p;
}

NeuronParams NeuronParams::lif_for_steps(std::size_t steps) {
  const auto& row = lif_row(steps);
  NeuronParams p;
  p.model = NeuronModel::LIF;
  p.v_th = row.v_th;
  p.tau = 1.0;
  p.dt = row.dt;
  p.alpha = row.alpha;
  return p;
}

double default_alpha(NeuronModel model, std::size_t steps) {
  return model == NeuronModel::IF ? 0.5 : lif_row(steps).alpha;
}

double default_threshold_floor(NeuronModel model, std::size_t steps) {
  return model == NeuronModel::IF ? 0.01 : lif_row(steps).floor;
}

NeuronState NeuronState::zeros(std::size_t width) {
  NeuronState s;
  s.v.assign(width, 0.0);
  s.u.assign(width, 0.0);
  return s;
}

SpikeTrain::SpikeTrain(std::size_t steps_in, std::size_t width_in)
    : steps(steps_in), width(width_in), bits(steps_in * width_in, 0) {}

std::span<const std::uint8_t> SpikeTrain::step(std::size_t n) const {
  return std::span<const std::uint8_t>(bits).subspan(n * width, width);
}

std::span<std::uint8_t> SpikeTrain::step(std::size_t n) {
  return std::span<std::uint8_t>(bits).subspan(n * width, width);
}

std::size_t SpikeTrain::count(std::size_t neuron) const {
  std::size_t c = 0;
  for (std::size_t n = 0; n < steps; ++n) c += at(n, neuron);
  return c;
}

std::size_t SpikeTrain::total() const {
  std::size_t c = 0;
  for (auto b : bits) c += b;
  return c;
}

void advance(NeuronState& state, std::span<const double> current, const NeuronParams& p,
             std::span<std::uint8_t> spikes) {
  const std::size_t w = state.v.size();
  if (current.size() != w || spikes.size() != w)
    throw DimensionError("neuron step: " + std::to_string(current.size()) + " currents for " +
                         std::to_string(w) + " neurons");
  if (state.u.size() != w) state.u.assign(w, 0.0);
  const double lam = p.lambda();
  const double gain = p.model == NeuronModel::LIF ? 1.0 - lam : 1.0;
  const double fire_at = p.alpha * p.v_th;
  for (std::size_t i = 0; i < w; ++i) {
    const double u = lam * state.v[i] + gain * current[i];
    const std::uint8_t s = u >= fire_at ? 1 : 0;
    state.u[i] = u;
    state.v[i] = u - p.v_th * s;
    spikes[i] = s;
  }
}

StepResult if_step(const NeuronState& state, std::span<const double> current, const NeuronParams& p) {
  if (p.model != NeuronModel::IF) throw ParameterError("if_step called with LIF parameters");
  p.validate();
  StepResult r{state, std::vector<std::uint8_t>(state.width(), 0)};
  advance(r.state, current, p, r.spikes);
  return r;
}

StepResult lif_step(const NeuronState& state, std::span<const double> current, const NeuronParams& p) {
  if (p.model != NeuronModel::LIF) throw ParameterError("lif_step called with IF parameters");
  p.validate();
  StepResult r{state, std::vector<std::uint8_t>(state.width(), 0)};
  advance(r.state, current, p, r.spikes);
  return r;
}

LayerSimulation simulate_layer(const NeuronState& initial, std::span<const double> currents,
                               std::size_t steps, const NeuronParams& p) {
  if (steps < 1) throw ParameterError("simulation needs at least one time step");
  p.validate();
  const std::size_t w = initial.width();
  if (currents.size() != steps * w)
    throw DimensionError("simulate_layer: expected " + std::to_string(steps * w) + " currents, got " +
                         std::to_string(currents.size()));
  LayerSimulation sim{SpikeTrain(steps, w), initial};
  for (std::size_t n = 0; n < steps; ++n)
    advance(sim.final_state, currents.subspan(n * w, w), p, sim.spikes.step(n));
  return sim;
}

}  // namespace dsr
