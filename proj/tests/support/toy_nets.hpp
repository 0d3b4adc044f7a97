#pragma once

// Helpers shared by the unit tests and the acceptance runner: small random
// fully connected networks and a finite-difference check of the
// representation-level gradients.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dsr/data.hpp"
#include "dsr/engine.hpp"
#include "dsr/network.hpp"

namespace dsr::testing {

struct ToyProblem {
  NetworkSpec spec;
  Tensor input;  // [B, in]
  std::vector<int> labels;
};

// 1..3 fc+spiking layers, widths <= 32, random thresholds.
inline ToyProblem random_toy(std::mt19937_64& rng, NeuronModel model) {
  std::uniform_int_distribution<std::size_t> depth(1, 3), width(2, 32), batch(2, 6);
  std::uniform_real_distribution<double> vth(0.5, 1.5), pix(0.0, 1.0);
  ToyProblem t;
  const std::size_t in = width(rng);
  t.spec.input_shape = {in};
  t.spec.neuron = model == NeuronModel::LIF ? NeuronParams::lif_for_steps(10) : NeuronParams::if_default();
  t.spec.neuron.v_th = vth(rng);
  const std::size_t layers = depth(rng);
  std::size_t classes = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t w = width(rng);
    t.spec.layers.push_back(LayerSpec::fc(w));
    LayerSpec s = LayerSpec::spiking();
    NeuronParams p = t.spec.neuron;
    p.v_th = vth(rng);
    s.neuron = p;
    t.spec.layers.push_back(s);
    classes = w;
  }
  const std::size_t b = batch(rng);
  t.input = Tensor(Shape{b, in});
  for (auto& v : t.input.mutable_data()) v = pix(rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < b; ++i) t.labels.push_back(label(rng));
  return t;
}

// Input representation the network sees for a static input.
inline Tensor input_representation(const Network& net, const Tensor& x) {
  const auto& np = net.spec().neuron;
  return np.model == NeuronModel::LIF ? scale(x, 1.0 / np.dt) : x.detach();
}

// Smallest distance of any clamp argument to its bounds 0 and hi.
inline double breakpoint_distance(Network& net, const Tensor& x) {
  NoGradGuard guard;
  SurrogateContext ctx{nullptr, false, Mode::Eval};
  Tensor z = input_representation(net, x);
  double d = INFINITY;
  for (const auto& layer : net.layers()) {
    if (layer->kind() == LayerKind::Spiking) {
      const auto p = static_cast<SpikingLayer&>(*layer).params();
      const bool lif = p.model == NeuronModel::LIF;
      const double hi = lif ? p.v_th / p.dt : p.v_th;
      for (double v : z.data()) {
        const double pre = lif ? v / p.tau : v;
        d = std::min({d, std::abs(pre), std::abs(pre - hi)});
      }
    }
    z = layer->surrogate(z, ctx);
  }
  return d;
}

inline double chain_loss(Network& net, const Tensor& x, const std::vector<int>& labels) {
  NoGradGuard guard;
  return softmax_cross_entropy(net.surrogate_chain(input_representation(net, x), Mode::Eval), labels).item();
}

// Collected pass whose recorded representations are the clamp-chain values,
// so surrogate_backward differentiates exactly the chain.
inline Collected chain_collected(Network& net, const Tensor& x) {
  Rng rng(0);
  Collected c = forward_collect(net, encode_static(x, 4), Mode::Eval, rng);
  NoGradGuard guard;
  SurrogateContext ctx{nullptr, false, Mode::Eval};
  Tensor z = input_representation(net, x);
  for (const auto& layer : net.layers()) {
    z = layer->surrogate(z, ctx);
    if (layer->kind() == LayerKind::Spiking)
      c.trace.records[layer->id()].representation.assign(z.data().begin(), z.data().end());
  }
  c.output.assign(z.data().begin(), z.data().end());
  return c;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t threshold_entries = 0;
};

// Compares surrogate_backward against central differences of the chain loss
// for every weight entry and every threshold.
inline GradCheck check_gradients(Network& net, const Tensor& x, const std::vector<int>& labels, double h = 1e-5) {
  for (auto& p : net.parameters()) p.value.set_requires_grad(true);
  const Collected c = chain_collected(net, x);
  surrogate_backward(net, c, labels);
  GradCheck out;
  for (auto& p : net.parameters()) {
    if (p.kind != ParamKind::Weight && p.kind != ParamKind::Threshold) continue;
    const std::vector<double> analytic = p.value.grad();
    auto values = p.value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      const double up = chain_loss(net, x, labels);
      values[i] = keep - h;
      const double down = chain_loss(net, x, labels);
      values[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++out.checked;
      if (p.kind == ParamKind::Threshold) ++out.threshold_entries;
    }
  }
  return out;
}

}  // namespace dsr::testing
