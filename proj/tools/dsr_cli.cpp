// dsr: train, evaluate and analyze spiking networks.
//
//   dsr train   --config run.json --out runs/a [--seed S] [--epochs E] [--deterministic]
//   dsr eval    --checkpoint runs/a/checkpoint.dsr [--config runs/a/config.json] [--quant-bits 8]
//   dsr analyze staircase|convergence|decompose [grid flags] --out table.csv
//
// --threads N (or DSR_THREADS) sets the worker count for batch-parallel kernels.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dsr/analysis.hpp"
#include "dsr/config.hpp"
#include "dsr/engine.hpp"
#include "dsr/errors.hpp"
#include "dsr/representation.hpp"

namespace fs = std::filesystem;

namespace {

struct TrainOptions {
  std::string config;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool deterministic = false;
};

struct EvalOptions {
  std::string checkpoint;
  std::string config;
  int quant_bits = 0;
};

struct AnalyzeOptions {
  std::string out;
  // staircase
  double v_th = 1.0;
  std::size_t steps = 5;
  double alpha = 1.0;
  double lo = -0.5;
  double hi = 1.5;
  std::size_t points = 200;
  // convergence
  std::vector<std::size_t> steps_list{16, 64, 256, 1024};
  std::vector<std::size_t> widths{16, 16, 8};
  std::uint64_t seed = 0;
  std::string model = "if";
  // decompose
  std::vector<double> noise{0.0, 0.1, 0.2, 0.4};
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw dsr::InputError("cannot write '" + path.string() + "'");
  out << text;
}

dsr::Shape frame_shape(const dsr::Dataset& d) { return d.frame_shape(); }

int cmd_train(const TrainOptions& o) {
  dsr::RunConfig cfg = dsr::load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.deterministic) cfg.train.deterministic = true;
  cfg.validate();

  fs::create_directories(o.out);
  const fs::path out(o.out);
  write_text(out / "config.json", dsr::dump_run_config(cfg));

  dsr::LoadedData data = dsr::load_data(cfg.data);
  if (data.train.classes > cfg.classes)
    throw dsr::SpecError(fmt::format("dataset has {} classes but network.classes is {}", data.train.classes,
                                     cfg.classes));
  dsr::Network net(dsr::network_spec(cfg, frame_shape(data.train)), cfg.train.seed);
  fmt::print("network: {} parameters tensors, {} spiking layers, input {}\n", net.parameters().size(),
             net.spiking_layers().size(), dsr::shape_string(frame_shape(data.train)));

  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  if (!csv) throw dsr::InputError("cannot write metrics.csv");
  csv << dsr::metrics_header(net.spiking_layers().size()) << '\n';

  dsr::Trainer trainer(net, cfg.train);
  trainer.fit(data.train, &data.test, [&](const dsr::TrainMetrics& m) {
    csv << dsr::metrics_row(m) << '\n';
    csv.flush();
    fmt::print("epoch {:>3}  lr {:.4f}  loss {:.4f}  train {:.4f}  test {:.4f}\n", m.epoch, m.lr, m.train_loss,
               m.train_acc, m.test_acc);
    if (cfg.save_every > 0 && m.epoch % cfg.save_every == 0)
      dsr::save_checkpoint((out / fmt::format("checkpoint_e{}.dsr", m.epoch)).string(), net);
  });
  dsr::save_checkpoint((out / "checkpoint.dsr").string(), net);
  fmt::print("wrote {}\n", (out / "checkpoint.dsr").string());
  return 0;
}

int cmd_eval(const EvalOptions& o) {
  const std::string config_path =
      o.config.empty() ? (fs::path(o.checkpoint).parent_path() / "config.json").string() : o.config;
  const dsr::RunConfig cfg = dsr::load_run_config(config_path);
  dsr::LoadedData data = dsr::load_data(cfg.data);
  dsr::Network net(dsr::network_spec(cfg, frame_shape(data.test)), cfg.train.seed);
  dsr::load_checkpoint(o.checkpoint, net);

  const auto full = dsr::evaluate(net, data.test, cfg.train.time_steps);
  fmt::print("accuracy {:.4f} ({} samples, N = {})\n", full.accuracy, full.samples, cfg.train.time_steps);
  for (std::size_t i = 0; i < full.firing_rate.size(); ++i)
    fmt::print("  spiking layer {:>2}: firing rate {:.4f}\n", i, full.firing_rate[i]);
  if (o.quant_bits != 0) {
    dsr::Network q = dsr::quantize_weights(net, dsr::QuantSpec{o.quant_bits});
    const auto qr = dsr::evaluate(q, data.test, cfg.train.time_steps);
    fmt::print("accuracy with {}-bit weights {:.4f} (change {:+.4f})\n", o.quant_bits, qr.accuracy,
               qr.accuracy - full.accuracy);
  }
  return 0;
}

dsr::NeuronParams analysis_neuron(const AnalyzeOptions& o) {
  dsr::NeuronParams p;
  p.model = dsr::parse_neuron_model(o.model);
  if (p.model == dsr::NeuronModel::LIF) p = dsr::NeuronParams::lif_for_steps(o.steps);
  p.v_th = o.v_th;
  p.alpha = o.alpha;
  return p;
}

void emit(const dsr::SweepResult& r, const std::string& out) {
  if (out.empty()) {
    std::cout << r.to_csv();
  } else {
    r.write_csv(out);
    fmt::print("wrote {} rows to {}\n", r.rows.size(), out);
  }
}

int cmd_staircase(const AnalyzeOptions& o) {
  if (o.points == 0) throw dsr::ParameterError("staircase grid is empty (--points 0)");
  const auto grid = dsr::linear_grid(o.lo * o.v_th, o.hi * o.v_th, o.points);
  emit(dsr::sweep_staircase(o.v_th, o.steps, o.alpha, grid), o.out);
  return 0;
}

int cmd_convergence(const AnalyzeOptions& o) {
  if (o.steps_list.empty()) throw dsr::ParameterError("convergence grid is empty");
  dsr::ConvergenceSpec spec;
  spec.widths = o.widths;
  spec.neuron = analysis_neuron(o);
  emit(dsr::sweep_convergence(spec, o.steps_list, o.seed), o.out);
  return 0;
}

int cmd_decompose(const AnalyzeOptions& o) {
  if (o.points == 0 || o.noise.empty()) throw dsr::ParameterError("decomposition grid is empty");
  const auto p = analysis_neuron(o);
  const auto means = dsr::linear_grid(o.lo * p.v_th, o.hi * p.v_th, o.points);
  emit(dsr::sweep_decomposition(p, o.steps, means, o.noise, o.seed), o.out);
  return 0;
}

std::size_t resolve_threads(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DSR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw dsr::ParameterError(std::string("DSR_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking network training by differentiation on spike representation"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: DSR_THREADS or 1)");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a network from a config file");
  train_cmd->add_option("--config", train.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "output directory");
  train_cmd->add_option("--seed", train.seed, "override train.seed");
  train_cmd->add_option("--epochs", train.epochs, "override train.epochs");
  train_cmd->add_flag("--deterministic", train.deterministic, "reproducible run (recorded in the config copy)");
  train_cmd->add_option("--threads", threads, "worker threads");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", eval.config, "resolved run config (default: next to the checkpoint)");
  eval_cmd->add_option("--quant-bits", eval.quant_bits, "also evaluate with quantized weights")
      ->check(CLI::IsMember({4, 8}));
  eval_cmd->add_option("--threads", threads, "worker threads");

  AnalyzeOptions an;
  auto* analyze_cmd = app.add_subcommand("analyze", "representation error sweeps");
  analyze_cmd->require_subcommand(1);
  auto add_common = [&](CLI::App* c) {
    c->add_option("--out", an.out, "CSV path (default: stdout)");
    c->add_option("--threads", threads, "worker threads");
  };
  auto* stair = analyze_cmd->add_subcommand("staircase", "constant-current IF rate vs clamp");
  add_common(stair);
  stair->add_option("--v-th", an.v_th, "threshold");
  stair->add_option("--steps", an.steps, "latency N");
  stair->add_option("--alpha", an.alpha, "firing hyperparameter");
  stair->add_option("--lo", an.lo, "grid start, in units of v_th");
  stair->add_option("--hi", an.hi, "grid end, in units of v_th");
  stair->add_option("--points", an.points, "grid size");
  auto* conv = analyze_cmd->add_subcommand("convergence", "layerwise representation error vs N");
  add_common(conv);
  conv->add_option("--steps-list", an.steps_list, "latencies")->delimiter(',');
  conv->add_option("--widths", an.widths, "input, hidden..., output widths")->delimiter(',');
  conv->add_option("--seed", an.seed, "weight and input seed");
  conv->add_option("--model", an.model, "if or lif");
  conv->add_option("--v-th", an.v_th, "threshold");
  conv->add_option("--alpha", an.alpha, "firing hyperparameter");
  auto* dec = analyze_cmd->add_subcommand("decompose", "quantization / deviation error split");
  add_common(dec);
  dec->add_option("--steps", an.steps, "latency N");
  dec->add_option("--model", an.model, "if or lif");
  dec->add_option("--v-th", an.v_th, "threshold");
  dec->add_option("--alpha", an.alpha, "firing hyperparameter");
  dec->add_option("--lo", an.lo, "mean current start, in units of v_th");
  dec->add_option("--hi", an.hi, "mean current end, in units of v_th");
  dec->add_option("--points", an.points, "number of mean currents");
  dec->add_option("--noise", an.noise, "noise amplitudes")->delimiter(',');
  dec->add_option("--seed", an.seed, "noise seed");

  CLI11_PARSE(app, argc, argv);

  try {
    dsr::set_num_threads(resolve_threads(threads));
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*stair) return cmd_staircase(an);
    if (*conv) return cmd_convergence(an);
    if (*dec) return cmd_decompose(an);
  } catch (const dsr::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}
