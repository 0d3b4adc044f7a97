// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dsr/analysis.hpp"
#include "dsr/config.hpp"
#include "dsr/engine.hpp"
#include "dsr/representation.hpp"
#include "toy_nets.hpp"

namespace fs = std::filesystem;
using namespace dsr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string percent_list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt::format("{}{:.2f}", s.empty() ? "" : " ", 100 * x);
  return s;
}

// ---- 1: gradients of the representation chain ----------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t nets = 0, skipped = 0, entries = 0, thresholds = 0;
  while (nets < 10) {
    const NeuronModel model = nets % 2 == 0 ? NeuronModel::IF : NeuronModel::LIF;
    auto toy = testing::random_toy(rng, model);
    Network net(toy.spec, rng());
    if (testing::breakpoint_distance(net, toy.input) < 1e-3) {
      ++skipped;
      continue;
    }
    const auto g = testing::check_gradients(net, toy.input, toy.labels, 1e-5);
    worst = std::max(worst, g.max_rel_error);
    entries += g.checked;
    thresholds += g.threshold_entries;
    ++nets;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60.0 && thresholds > 0,
          fmt::format("10 nets ({} skipped near breakpoints), {} entries incl. {} thresholds, max rel err {:.3g}, {:.1f}s",
                      skipped, entries, thresholds, worst, secs)};
}

// ---- 2: staircase and quantization error ----------------------------------------------------------

// Supremum of |rate - clamp(I, 0, v_th)| over [lo, hi]. The simulated rate is
// constant between consecutive breakpoints and the clamp is monotone, so the
// supremum on a piece is attained at one of its ends.
double exact_max_quant_error(double v_th, std::size_t n, double alpha, double lo, double hi) {
  NeuronParams p;
  p.v_th = v_th;
  p.alpha = alpha;
  const double offset = alpha == 0.5 ? 0.5 : 0.0;
  std::vector<double> cuts{lo, hi};
  for (std::size_t k = 0; k <= n + 1; ++k) {
    const double b = (static_cast<double>(k) - offset) * v_th / static_cast<double>(n);
    if (b > lo && b < hi) cuts.push_back(b);
  }
  std::sort(cuts.begin(), cuts.end());
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double rate = constant_current_rate(p, 0.5 * (cuts[i] + cuts[i + 1]), n);
    for (double end : {cuts[i], cuts[i + 1]}) worst = std::max(worst, std::abs(rate - std::clamp(end, 0.0, v_th)));
  }
  return worst;
}

Outcome staircase_exactness() {
  const double v_th = 1.0;
  const auto grid = linear_grid(-0.5 * v_th, 1.5 * v_th, 200);
  std::size_t compared = 0, mismatches = 0;
  bool halved = true;
  std::string halves;
  for (std::size_t n : {5, 16, 64}) {
    std::array<double, 2> grid_max{};
    std::array<double, 2> exact_max{};
    for (int which = 0; which < 2; ++which) {
      const double alpha = which == 0 ? 1.0 : 0.5;
      const SweepResult r = sweep_staircase(v_th, n, alpha, grid);
      const auto cur = r.values("current");
      const auto sim = r.values("simulated");
      const auto closed = r.values("closed_form");
      const auto eq = r.values("e_q");
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const double x = static_cast<double>(n) * cur[i] / v_th + (alpha == 0.5 ? 0.5 : 0.0);
        if (std::abs(x - std::round(x)) < 1e-9) continue;
        ++compared;
        if (sim[i] != closed[i]) ++mismatches;
        grid_max[which] = std::max(grid_max[which], std::abs(eq[i]));
      }
      exact_max[which] = exact_max_quant_error(v_th, n, alpha, -0.5 * v_th, 1.5 * v_th);
    }
    halved = halved && std::abs(exact_max[1] - 0.5 * exact_max[0]) <= 1e-12;
    halves += fmt::format(" N={}: sup {:.6g}/{:.6g} grid {:.4g}/{:.4g};", n, exact_max[0], exact_max[1],
                          grid_max[0], grid_max[1]);
  }
  return {mismatches == 0 && halved,
          fmt::format("{} grid points, {} mismatches; max|e_q| alpha 1/0.5:{}", compared, mismatches, halves)};
}

// ---- 3: convergence ---------------------------------------------------------------------------------

Outcome convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> steps{16, 64, 256, 1024};
  ConvergenceSpec spec;  // 16 -> 16 -> 8, IF, v_th 1
  const SweepResult r = sweep_convergence(spec, steps, 7);
  bool monotone = true;
  std::string errs;
  for (const auto& col : {"err_1", "err_2"}) {
    const auto e = r.values(col);
    for (std::size_t i = 1; i < e.size(); ++i) monotone = monotone && e[i] <= e[i - 1];
  }
  for (double e : r.values("err_max")) errs += fmt::format(" {:.4g}", e);
  const double last = r.values("err_max").back();

  NeuronParams if_neuron = spec.neuron;
  const std::vector<std::size_t> single_steps{1, 2, 5, 16, 64, 256, 1024};
  const SweepResult single = sweep_single_neuron(if_neuron, linear_grid(-0.5, 1.5, 801), single_steps);
  bool bounded = true;
  for (const auto& row : single.rows) bounded = bounded && row[1] <= if_neuron.v_th / row[0];

  // LIF with the default neuron for N = 10: fit c on short latencies, check
  // the bound on long ones.
  const NeuronParams lif = NeuronParams::lif_for_steps(10);
  const double offset = lif.v_th / lif.tau;
  const auto currents = linear_grid(-0.5 * lif.v_th * lif.tau / lif.dt, 1.5 * lif.v_th * lif.tau / lif.dt, 401);
  const std::vector<std::size_t> fit_steps{1, 2, 3, 5, 8}, check_steps{16, 64, 256, 1024};
  const double c = fit_inverse_bound(sweep_single_neuron(lif, currents, fit_steps), offset);
  const SweepResult held_out = sweep_single_neuron(lif, currents, check_steps);
  bool lif_ok = c > 0.0;
  for (const auto& row : held_out.rows) lif_ok = lif_ok && row[1] <= offset + c / row[0] + 1e-12;
  // Reported only: with alpha = 1 the finite-dt gain (1 - lambda) / dt < 1 / tau
  // pushes the error near saturation past v_th / tau.
  NeuronParams lif_alpha1 = lif;
  lif_alpha1.alpha = 1.0;
  const std::vector<std::size_t> big{1024};
  const double alpha1_err = sweep_single_neuron(lif_alpha1, currents, big).values("max_err").back();

  const double secs = seconds_since(t0);
  return {monotone && last < 0.02 && bounded && lif_ok && secs < 60.0,
          fmt::format("err_max over N{{16,64,256,1024}}:{} (monotone {}); single IF <= v_th/N {}; LIF alpha {} "
                      "c = {:.4g} with offset {:.4g}, N=1024 max err {:.4g} (ok {}; alpha 1 gives {:.4g}); {:.1f}s",
                      errs, monotone, bounded, lif.alpha, c, offset, held_out.values("max_err").back(), lif_ok,
                      alpha1_err, secs)};
}

// ---- 4, 5, 7, 9: desk-scale training ----------------------------------------------------------------

RunConfig digits_config(std::size_t steps, std::uint64_t seed) {
  const std::string dir = std::string(DSR_DATA_DIR) + "/digits/";
  std::ostringstream json;
  json << R"({"presets": ["if-default", "digits"], "network": {"arch": "digits-cnn", "classes": 10},)"
       << R"("train": {"time_steps": )" << steps << R"(, "epochs": 30, "seed": )" << seed << "},"
       << R"("data": {"format": "idx", "train_images": ")" << dir << R"(train-images.idx3-ubyte", "train_labels": ")"
       << dir << R"(train-labels.idx1-ubyte", "test_images": ")" << dir << R"(test-images.idx3-ubyte", "test_labels": ")"
       << dir << R"(test-labels.idx1-ubyte"}})";
  return parse_run_config(json.str());
}

struct TrainedRun {
  double test_acc = 0.0;
  double seconds = 0.0;
  std::vector<double> v_th;
};

TrainedRun train_digits(const RunConfig& cfg, const LoadedData& data, Network* keep = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  Network net(network_spec(cfg, data.train.frame_shape()), cfg.train.seed);
  Trainer trainer(net, cfg.train);
  const auto history = trainer.fit(data.train, &data.test);
  TrainedRun out{history.back().test_acc, seconds_since(t0), history.back().v_th};
  if (keep) *keep = net;
  return out;
}

struct Training {
  std::vector<double> full, ablated, short_latency;
  double full_seconds = 0.0;
  Network model;  // seed-1 full DSR model
  LoadedData data;
};

Training run_training() {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  Training t{{}, {}, {}, 0.0, Network({{1}, NeuronParams::if_default(), {LayerSpec::fc(2), LayerSpec::spiking()}}, 0),
             load_data(digits_config(10, 1).data)};
  for (auto seed : seeds) {
    RunConfig full = digits_config(10, seed);
    const auto r = train_digits(full, t.data, seed == 1 ? &t.model : nullptr);
    t.full.push_back(r.test_acc);
    t.full_seconds = std::max(t.full_seconds, r.seconds);
    std::cout << fmt::format("  full DSR seed {}: test acc {:.4f} in {:.0f}s\n", seed, r.test_acc, r.seconds)
              << std::flush;

    RunConfig ablated = digits_config(10, seed);
    ablated.neuron.alpha = 1.0;
    ablated.train.train_threshold = false;
    const auto a = train_digits(ablated, t.data);
    t.ablated.push_back(a.test_acc);
    std::cout << fmt::format("  ablation seed {}: test acc {:.4f} in {:.0f}s\n", seed, a.test_acc, a.seconds)
              << std::flush;

    const auto s = train_digits(digits_config(5, seed), t.data);
    t.short_latency.push_back(s.test_acc);
    std::cout << fmt::format("  N=5 seed {}: test acc {:.4f} in {:.0f}s\n", seed, s.test_acc, s.seconds)
              << std::flush;
  }
  return t;
}

Outcome desk_training(const Training& t) {
  const double m = median(t.full);
  return {m >= 0.97 && t.full_seconds < 30 * 60,
          fmt::format("digits-cnn, IF, N=10, alpha 0.5, trained v_th: median test acc {:.2f}% (seeds: {}), "
                      "slowest run {:.0f}s",
                      100 * m, percent_list(t.full), t.full_seconds)};
}

Outcome ablation(const Training& t) {
  const double gap = median(t.full) - median(t.ablated);
  return {gap >= 0.005, fmt::format("alpha 1 with fixed v_th 6: median {:.2f}% (seeds: {}), drop {:.2f} pp",
                                    100 * median(t.ablated), percent_list(t.ablated), 100 * gap)};
}

Outcome quantization(Training& t) {
  const std::size_t steps = 10;
  const double base = evaluate(t.model, t.data.test, steps).accuracy;
  Network q8 = quantize_weights(t.model, {8});
  Network q4 = quantize_weights(t.model, {4});
  const double a8 = evaluate(q8, t.data.test, steps).accuracy;
  const double a4 = evaluate(q4, t.data.test, steps).accuracy;
  const double d8 = std::abs(a8 - base), d4 = std::abs(a4 - base);
  return {d8 < 0.01 && d4 < 0.03, fmt::format("full precision {:.2f}%, 8-bit {:.2f}% ({:+.2f} pp), 4-bit {:.2f}% "
                                              "({:+.2f} pp)",
                                              100 * base, 100 * a8, 100 * (a8 - base), 100 * a4, 100 * (a4 - base))};
}

Outcome latency(const Training& t) {
  const double drop = median(t.full) - median(t.short_latency);
  return {drop < 0.02, fmt::format("N=5 median {:.2f}% (seeds: {}) vs N=10 {:.2f}%, drop {:.2f} pp",
                                   100 * median(t.short_latency), percent_list(t.short_latency),
                                   100 * median(t.full), 100 * drop)};
}

// ---- 6: time-folded batch norm ----------------------------------------------------------------------

Outcome bn_equivalence() {
  constexpr std::size_t N = 4, B = 8, C = 3, H = 8, W = 8, S = H * W;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.5, 2.0);
  std::vector<double> x5(N * B * C * S);  // [N, B, C, H, W]
  for (auto& v : x5) v = g(rng);
  BatchNormLayer bn(C);
  for (auto& v : bn.gamma().mutable_data()) v = g(rng);
  for (auto& v : bn.beta().mutable_data()) v = g(rng);

  // Oracle: reshape to [N*B, C, H, W], normalize each channel with two-pass
  // statistics, reshape back.
  const std::size_t M = N * B;
  std::vector<double> folded(x5);
  std::vector<double> ref(folded.size());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < S; ++s) mean += folded[(m * C + c) * S + s];
    mean /= static_cast<double>(M * S);
    double var = 0.0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < S; ++s) var += std::pow(folded[(m * C + c) * S + s] - mean, 2);
    var /= static_cast<double>(M * S);
    const double gamma = bn.gamma().at(c), beta = bn.beta().at(c);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (m * C + c) * S + s;
        ref[i] = gamma * (folded[i] - mean) / std::sqrt(var + bn.eps()) + beta;
      }
  }

  const Tensor y = bn_timefold(Tensor(Shape{M, C, H, W}, x5), bn, Mode::Train);
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y.at(i) - ref[i]));
  return {worst <= 1e-6, fmt::format("[4, 8, 3, 8, 8] max abs difference {:.3g}", worst)};
}

// ---- 8: determinism through the CLI -----------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "dsr_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string data = std::string(DSR_DATA_DIR) + "/digits/";
  std::ofstream(dir / "run.json") << R"({"presets": ["if-default", "digits"],
    "network": {"arch": "digits-cnn", "classes": 10},
    "train": {"time_steps": 6, "epochs": 2, "seed": 11},
    "data": {"format": "idx", "limit_train": 256, "limit_test": 128,
      "train_images": ")" << data << R"(train-images.idx3-ubyte", "train_labels": ")" << data
                                  << R"(train-labels.idx1-ubyte", "test_images": ")" << data
                                  << R"(test-images.idx3-ubyte", "test_labels": ")" << data
                                  << R"(test-labels.idx1-ubyte"}})";
  int status = 0;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = fmt::format("'{}' train --config '{}' --out '{}' --deterministic > /dev/null 2>&1",
                                        DSR_CLI_PATH, (dir / "run.json").string(), (dir / run).string());
    status |= std::system(cmd.c_str());
  }
  const std::string a = slurp(dir / "a" / "metrics.csv"), b = slurp(dir / "b" / "metrics.csv");
  const bool same = status == 0 && !a.empty() && a == b;
  const std::size_t rows = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  fs::remove_all(dir);
  return {same, fmt::format("two --deterministic train runs: exit status {}, {} CSV lines, byte-identical {}", status,
                            rows, a == b)};
}

}  // namespace

int main() {
  std::vector<Outcome> results(10);
  auto report = [&](int k, Outcome o) {
    std::cout << "  finished criterion " << k << std::endl;
    results[static_cast<std::size_t>(k)] = std::move(o);
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  report(1, guarded(gradient_fidelity));
  report(2, guarded(staircase_exactness));
  report(3, guarded(convergence));
  report(6, guarded(bn_equivalence));
  report(8, guarded(determinism));

  std::optional<Training> training;
  const Outcome setup = guarded([&] {
    training.emplace(run_training());
    return Outcome{true, ""};
  });
  if (training) {
    report(4, guarded([&] { return desk_training(*training); }));
    report(5, guarded([&] { return ablation(*training); }));
    report(7, guarded([&] { return quantization(*training); }));
    report(9, guarded([&] { return latency(*training); }));
  } else {
    for (int k : {4, 5, 7, 9}) report(k, {false, "training failed: " + setup.detail});
  }

  for (std::size_t k = 1; k < results.size(); ++k)
    std::cout << (results[k].pass ? "PASS" : "FAIL") << " criterion " << k << ": " << results[k].detail << '\n';
  const bool all = std::all_of(results.begin() + 1, results.end(), [](const Outcome& o) { return o.pass; });
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
