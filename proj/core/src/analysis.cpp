#include "dsr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "dsr/engine.hpp"
#include "dsr/errors.hpp"
#include "dsr/representation.hpp"

namespace dsr {

void QuantSpec::validate() const {
  if (bits < 2 || bits > 32) throw ParameterError(fmt::format("quantization needs 2..32 bits, got {}", bits));
}

double quant_scale(std::span<const double> w, int bits) {
  QuantSpec{bits}.validate();
  double m = 0.0;
  for (double v : w) m = std::max(m, std::abs(v));
  return m / (std::ldexp(1.0, bits - 1) - 1.0);
}

void quantize_values(std::span<double> w, int bits) {
  const double s = quant_scale(w, bits);
  if (s == 0.0) return;
  for (auto& v : w) v = std::round(v / s) * s;
}

Network quantize_weights(const Network& net, const QuantSpec& spec) {
  spec.validate();
  Network out(net);
  for (auto& p : out.parameters())
    if (p.kind == ParamKind::Weight) quantize_values(p.value.mutable_data(), spec.bits);
  return out;
}

std::vector<double> firing_rate_report(Network& net, const Dataset& data, std::size_t steps) {
  if (data.size() == 0) throw ParameterError("firing_rate_report: empty dataset");
  return evaluate(net, data, steps).firing_rate;
}

// ---- sweep tables -----------------------------------------------------------------------------

void SweepResult::add_row(std::vector<double> row) {
  if (row.size() != columns.size())
    throw DimensionError(fmt::format("sweep row has {} values for {} columns", row.size(), columns.size()));
  for (double v : row)
    if (!std::isfinite(v)) throw NumericError("sweep produced a non-finite value");
  rows.push_back(std::move(row));
}

std::size_t SweepResult::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw UsageError("no sweep column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> SweepResult::values(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

std::string SweepResult::to_csv() const {
  std::string s;
  for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
  s += '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + fmt::format("{}", r[i]);
    s += '\n';
  }
  return s;
}

void SweepResult::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << to_csv();
}

std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points == 0) throw ParameterError("grid needs at least one point");
  if (!(lo <= hi)) throw ParameterError("grid lower end exceeds upper end");
  if (points == 1) return {lo};
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

SweepResult sweep_staircase(double v_th, std::size_t steps, double alpha, std::span<const double> currents) {
  if (currents.empty()) throw ParameterError("staircase sweep needs a non-empty current grid");
  NeuronParams p;
  p.model = NeuronModel::IF;
  p.v_th = v_th;
  p.alpha = alpha;
  p.validate();
  std::vector<double> sorted(currents.begin(), currents.end());
  std::sort(sorted.begin(), sorted.end());
  SweepResult r{{"current", "simulated", "closed_form", "clamp", "e_q"}, {}};
  for (double i : sorted) {
    const double sim = constant_current_rate(p, i, steps);
    const double ref = std::clamp(i, 0.0, v_th);
    r.add_row({i, sim, closed_form_rate_if(i, v_th, steps, alpha), ref, sim - ref});
  }
  return r;
}

SweepResult sweep_convergence(const ConvergenceSpec& spec, std::span<const std::size_t> steps_list,
                              std::uint64_t seed) {
  if (spec.widths.size() < 2) throw ParameterError("convergence sweep needs an input and at least one layer");
  if (steps_list.empty()) throw ParameterError("convergence sweep needs at least one N");
  spec.neuron.validate();
  const std::size_t layers = spec.widths.size() - 1;

  NetworkSpec ns{{spec.widths[0]}, spec.neuron, {}};
  for (std::size_t l = 0; l < layers; ++l) {
    ns.layers.push_back(LayerSpec::fc(spec.widths[l + 1]));
    ns.layers.push_back(LayerSpec::spiking());
  }
  Network net(ns, seed);
  Rng rng(seed);
  for (auto& p : net.parameters()) {
    if (p.kind != ParamKind::Weight) continue;
    std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(static_cast<double>(p.value.dim(1))));
    for (auto& v : p.value.mutable_data()) v = w(rng);
  }
  std::uniform_real_distribution<double> in(spec.input_lo, spec.input_hi);
  Tensor x(Shape{spec.samples, spec.widths[0]});
  for (auto& v : x.mutable_data()) v = in(rng);

  // Reference activations z^i of the pure clamp chain.
  std::vector<std::vector<double>> z;
  {
    NoGradGuard guard;
    const double in_scale = spec.neuron.model == NeuronModel::LIF ? 1.0 / spec.neuron.dt : 1.0;
    Tensor zi = scale(x, in_scale);
    SurrogateContext ctx{nullptr, false, Mode::Eval};
    for (const auto& layer : net.layers()) {
      zi = layer->surrogate(zi, ctx);
      if (layer->kind() == LayerKind::Spiking) z.emplace_back(zi.data().begin(), zi.data().end());
    }
  }

  SweepResult r;
  r.columns.push_back("steps");
  for (std::size_t l = 1; l <= layers; ++l) r.columns.push_back(fmt::format("err_{}", l));
  r.columns.push_back("err_max");
  std::vector<std::size_t> ns_sorted(steps_list.begin(), steps_list.end());
  std::sort(ns_sorted.begin(), ns_sorted.end());
  for (std::size_t n : ns_sorted) {
    if (n < 1) throw ParameterError("N must be >= 1");
    const Collected c = forward_collect(net, encode_static(x, n), Mode::Eval, rng);
    std::vector<double> row{static_cast<double>(n)};
    double worst = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& a = c.representation(l);
      double e = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) e = std::max(e, std::abs(a[k] - z[l][k]));
      row.push_back(e);
      worst = std::max(worst, e);
    }
    row.push_back(worst);
    r.add_row(std::move(row));
  }
  return r;
}

SweepResult sweep_single_neuron(const NeuronParams& p, std::span<const double> currents,
                                std::span<const std::size_t> steps_list) {
  if (currents.empty() || steps_list.empty()) throw ParameterError("single-neuron sweep needs a non-empty grid");
  p.validate();
  std::vector<std::size_t> sorted(steps_list.begin(), steps_list.end());
  std::sort(sorted.begin(), sorted.end());
  SweepResult r{{"steps", "max_err"}, {}};
  for (std::size_t n : sorted) {
    double e = 0.0;
    for (double i : currents) {
      const double drive = p.model == NeuronModel::LIF ? i / p.tau : i;
      e = std::max(e, std::abs(constant_current_rate(p, i, n) - std::clamp(drive, 0.0, p.bound())));
    }
    r.add_row({static_cast<double>(n), e});
  }
  return r;
}

double fit_inverse_bound(const SweepResult& single, double offset) {
  const auto steps = single.values("steps");
  const auto err = single.values("max_err");
  double c = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) c = std::max(c, (err[i] - offset) * steps[i]);
  return c;
}

SweepResult sweep_decomposition(const NeuronParams& p, std::size_t steps, std::span<const double> means,
                                std::span<const double> noise_levels, std::uint64_t seed) {
  if (means.empty() || noise_levels.empty()) throw ParameterError("decomposition sweep needs a non-empty grid");
  p.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SweepResult r{{"mean_current", "noise", "e_r", "e_q", "e_d"}, {}};
  std::vector<double> ms(means.begin(), means.end());
  std::sort(ms.begin(), ms.end());
  for (double m : ms)
    for (double noise : noise_levels) {
      std::vector<double> currents(steps);
      for (auto& c : currents) c = m + noise * u(rng);
      // Re-centre so the (weighted) mean current is exactly m.
      const auto w = temporal_weights(steps, p.lambda());
      double wm = 0.0;
      for (std::size_t n = 0; n < steps; ++n) wm += w[n] * currents[n];
      for (auto& c : currents) c += m - wm;
      const auto sim = simulate_layer(NeuronState::zeros(1), currents, steps, p);
      const auto e = decompose_error(sim.spikes, currents, p)[0];
      r.add_row({m, noise, e.e_r, e.e_q, e.e_d});
    }
  return r;
}

}  // namespace dsr
