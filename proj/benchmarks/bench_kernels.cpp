#include <benchmark/benchmark.h>

#include <random>

#include "dsr/data.hpp"
#include "dsr/engine.hpp"
#include "dsr/neuron.hpp"

namespace {

dsr::Tensor random_tensor(const dsr::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  dsr::Tensor t(shape);
  for (auto& v : t.mutable_data()) v = u(rng);
  return t;
}

// Spike-like input: a fraction `density` of ones, the rest zeros.
dsr::Tensor spike_tensor(const dsr::Shape& shape, double density, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(density);
  dsr::Tensor t(shape);
  for (auto& v : t.mutable_data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

void BM_Conv2dDense(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({8, c, 16, 16}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  dsr::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dsr::conv2d(x, w, {}, {1, 1}));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dDense)->RangeMultiplier(2)->Range(4, 32);

void BM_Conv2dSpikes(benchmark::State& state) {
  const double density = static_cast<double>(state.range(0)) / 100.0;
  const auto x = spike_tensor({8, 16, 16, 16}, density, 3);
  const auto w = random_tensor({16, 16, 3, 3}, 4);
  dsr::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dsr::conv2d(x, w, {}, {1, 1}));
  state.counters["density"] = density;
}
BENCHMARK(BM_Conv2dSpikes)->Arg(5)->Arg(20)->Arg(50);

void BM_Linear(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({64, n}, 5);
  const auto w = random_tensor({n, n}, 6);
  dsr::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dsr::linear(x, w));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Linear)->RangeMultiplier(4)->Range(16, 1024);

void BM_SimulateLayer(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t neurons = 4096;
  const auto currents = random_tensor({steps, neurons}, 7, 0.0, 1.5);
  const auto p = dsr::NeuronParams::if_default();
  for (auto _ : state)
    benchmark::DoNotOptimize(dsr::simulate_layer(dsr::NeuronState::zeros(neurons), currents.data(), steps, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(steps * neurons));
}
BENCHMARK(BM_SimulateLayer)->RangeMultiplier(2)->Range(5, 40);

dsr::NetworkSpec digits_spec() {
  return dsr::preset_network("digits-cnn", {1, 8, 8}, 10, dsr::NeuronParams::if_default());
}

void BM_ForwardCollect(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  dsr::Network net(digits_spec(), 0);
  const auto frames = dsr::encode_static(random_tensor({32, 1, 8, 8}, 8, 0.0, 1.0), steps);
  dsr::Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(dsr::forward_collect(net, frames, dsr::Mode::Eval, rng));
}
BENCHMARK(BM_ForwardCollect)->Arg(5)->Arg(10)->Arg(20);

void BM_TrainStep(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  dsr::Network net(digits_spec(), 0);
  dsr::TrainConfig cfg;
  cfg.time_steps = steps;
  cfg.batch_size = 32;
  dsr::Optimizer opt(cfg.optimizer, cfg);
  const auto frames = dsr::encode_static(random_tensor({32, 1, 8, 8}, 9, 0.0, 1.0), steps);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  dsr::Rng rng(0);
  for (auto _ : state) benchmark::DoNotOptimize(dsr::train_step(net, opt, frames, labels, cfg, 0.01, rng));
}
BENCHMARK(BM_TrainStep)->Arg(5)->Arg(10)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
