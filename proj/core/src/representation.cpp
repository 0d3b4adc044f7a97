#include "dsr/representation.hpp"

#include <algorithm>
#include <cmath>

#include "dsr/errors.hpp"

namespace dsr {

namespace {

double clamp_map(double mean_current, const NeuronParams& p) {
  const double x = p.model == NeuronModel::LIF ? mean_current / p.tau : mean_current;
  return std::clamp(x, 0.0, p.bound());
}

Tensor as_batch(const Tensor& z) {
  if (z.rank() == 1) return reshape(z, Shape{1, z.numel()});
  return z;
}

Tensor restore_rank(const Tensor& out, const Tensor& z_prev) {
  if (z_prev.rank() == 1) return reshape(out, Shape{out.numel()});
  return out;
}

}  // namespace

std::vector<double> temporal_weights(std::size_t steps, double lambda) {
  if (steps < 1) throw ParameterError("representation needs at least one time step");
  std::vector<double> w(steps);
  double total = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    w[n] = std::pow(lambda, static_cast<double>(steps - 1 - n));
    total += w[n];
  }
  for (auto& v : w) v /= total;
  return w;
}

double scaled_rate(double v_th, std::size_t count, std::size_t steps) {
  return v_th * static_cast<double>(count) / static_cast<double>(steps);
}

Representation rep_if(const SpikeTrain& s, double v_th) {
  if (s.steps < 1 || s.width < 1) throw ParameterError("rep_if: empty spike train");
  Representation r{std::vector<double>(s.width), NeuronModel::IF, v_th};
  for (std::size_t i = 0; i < s.width; ++i) r.o[i] = scaled_rate(v_th, s.count(i), s.steps);
  return r;
}

Representation rep_lif(const SpikeTrain& s, double v_th, double lambda, double dt) {
  if (s.steps < 1 || s.width < 1) throw ParameterError("rep_lif: empty spike train");
  if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("rep_lif: lambda must lie in (0, 1)");
  if (!(dt > 0.0)) throw ParameterError("rep_lif: dt must be positive");
  const auto w = temporal_weights(s.steps, lambda);
  Representation r{std::vector<double>(s.width, 0.0), NeuronModel::LIF, v_th / dt};
  for (std::size_t n = 0; n < s.steps; ++n)
    for (std::size_t i = 0; i < s.width; ++i)
      if (s.at(n, i)) r.o[i] += w[n];
  for (auto& v : r.o) v = std::min(v * v_th / dt, r.bound);
  return r;
}

Representation rep_input(std::span<const double> frames, std::size_t steps, NeuronModel model,
                         double lambda, double dt) {
  if (steps < 1 || frames.empty() || frames.size() % steps != 0)
    throw DimensionError("rep_input: " + std::to_string(frames.size()) + " values over " +
                         std::to_string(steps) + " steps");
  const std::size_t width = frames.size() / steps;
  const auto w = temporal_weights(steps, model == NeuronModel::LIF ? lambda : 1.0);
  Representation r{std::vector<double>(width, 0.0), model};
  for (std::size_t n = 0; n < steps; ++n)
    for (std::size_t i = 0; i < width; ++i) r.o[i] += w[n] * frames[n * width + i];
  if (model == NeuronModel::LIF) {
    if (!(dt > 0.0)) throw ParameterError("rep_input: dt must be positive");
    for (auto& v : r.o) v /= dt;
  }
  return r;
}

Tensor surrogate_map_if(const Tensor& z_prev, const Tensor& w, const Tensor& v_th) {
  const Tensor pre = linear(as_batch(z_prev), w);
  return restore_rank(clamp(pre, Tensor::scalar(0.0), v_th), z_prev);
}

Tensor surrogate_map_lif(const Tensor& z_prev, const Tensor& w, double tau, const Tensor& v_th,
                         double dt) {
  if (!(tau > 0.0) || !(dt > 0.0) || !(dt < tau))
    throw ParameterError("surrogate_map_lif requires 0 < dt < tau");
  const Tensor pre = scale(linear(as_batch(z_prev), w), 1.0 / tau);
  return restore_rank(clamp(pre, Tensor::scalar(0.0), scale(v_th, 1.0 / dt)), z_prev);
}

double closed_form_rate_if(double current, double v_th, std::size_t steps, double alpha) {
  if (steps < 1) throw ParameterError("closed_form_rate_if: steps must be >= 1");
  if (!(v_th > 0.0)) throw ParameterError("closed_form_rate_if: threshold must be positive");
  const double x = static_cast<double>(steps) * current / v_th;
  double k;
  if (alpha == 1.0) {
    k = std::floor(x);
  } else if (alpha == 0.5) {
    k = std::floor(x + 0.5);  // ties fire, so halves round up
  } else {
    NeuronParams p;
    p.model = NeuronModel::IF;
    p.v_th = v_th;
    p.alpha = alpha;
    return constant_current_rate(p, current, steps);
  }
  k = std::clamp(k, 0.0, static_cast<double>(steps));
  return scaled_rate(v_th, static_cast<std::size_t>(k), steps);
}

double constant_current_rate(const NeuronParams& p, double current, std::size_t steps) {
  const std::vector<double> currents(steps, current);
  const auto sim = simulate_layer(NeuronState::zeros(1), currents, steps, p);
  if (p.model == NeuronModel::IF) return rep_if(sim.spikes, p.v_th).o[0];
  return rep_lif(sim.spikes, p.v_th, p.lambda(), p.dt).o[0];
}

std::vector<ErrorDecomposition> decompose_error(const SpikeTrain& s, std::span<const double> currents,
                                                const NeuronParams& p) {
  p.validate();
  if (currents.size() != s.steps * s.width)
    throw DimensionError("decompose_error: currents do not match the spike train");
  const Representation rep = p.model == NeuronModel::IF ? rep_if(s, p.v_th)
                                                        : rep_lif(s, p.v_th, p.lambda(), p.dt);
  const auto w = temporal_weights(s.steps, p.lambda());
  std::vector<ErrorDecomposition> out(s.width);
  for (std::size_t i = 0; i < s.width; ++i) {
    double mean_current = 0.0;
    for (std::size_t n = 0; n < s.steps; ++n) mean_current += w[n] * currents[n * s.width + i];
    const double target = clamp_map(mean_current, p);
    const double quantized = p.model == NeuronModel::IF
                                 ? closed_form_rate_if(mean_current, p.v_th, s.steps, p.alpha)
                                 : constant_current_rate(p, mean_current, s.steps);
    auto& e = out[i];
    e.e_r = rep.o[i] - target;
    e.e_q = quantized - target;
    e.e_d = e.e_r - e.e_q;
  }
  return out;
}

MembraneSplit split_membrane(std::span<const double> currents, double final_v, const NeuronParams& p) {
  if (currents.empty()) throw ParameterError("split_membrane: no currents");
  const std::size_t steps = currents.size();
  MembraneSplit m;
  if (p.model == NeuronModel::IF) {
    double total = 0.0;
    for (double c : currents) total += c;
    m.v_minus = std::min(std::max(total - static_cast<double>(steps) * p.v_th, 0.0), total);
  } else {
    const double lam = p.lambda();
    double norm = 0.0;
    double weighted = 0.0;
    for (std::size_t n = 0; n < steps; ++n) {
      const double wn = std::pow(lam, static_cast<double>(steps - 1 - n));
      norm += wn;
      weighted += wn * currents[n];
    }
    const double drive = weighted / norm / p.tau;
    const double span = p.dt * norm;
    if (drive < 0.0)
      m.v_minus = span * drive;
    else if (drive > p.v_th / p.dt)
      m.v_minus = span * (drive - p.v_th / p.dt);
  }
  m.v_plus = final_v - m.v_minus;
  return m;
}

double best_alpha(NeuronParams p, std::size_t steps, std::span<const double> currents,
                  std::span<const double> candidates) {
  if (currents.empty() || candidates.empty()) throw ParameterError("best_alpha: empty grid");
  double best = candidates.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double a : candidates) {
    p.alpha = a;
    p.validate();
    double err = 0.0;
    for (double c : currents) err += std::abs(constant_current_rate(p, c, steps) - clamp_map(c, p));
    err /= static_cast<double>(currents.size());
    if (err < best_err) {
      best_err = err;
      best = a;
    }
  }
  return best;
}

}  // namespace dsr
