#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsr/data.hpp"
#include "dsr/network.hpp"

namespace dsr {

enum class OptimizerKind { SgdMomentum, Adam };
// How the clamp-bound part of a threshold gradient is rescaled before the
// optimizer sees it. BatchDt divides by the batch size and, for LIF, also
// multiplies by dt.
enum class ThresholdRule { None, Batch, BatchDt };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(ThresholdRule rule);
ThresholdRule parse_threshold_rule(const std::string& name);

struct TrainConfig {
  std::size_t time_steps = 10;
  bool train_threshold = true;
  double threshold_floor = 0.01;
  double threshold_l2 = 1e-3;
  ThresholdRule threshold_rule = ThresholdRule::BatchDt;

  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t horizon = 0;  // cosine period in epochs; 0 = epochs

  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  bool deterministic = false;

  void validate() const;
  std::size_t schedule_horizon() const { return horizon == 0 ? epochs : horizon; }
};

struct TrainMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // cross-entropy only
  double reg_loss = 0.0;    // threshold regularizer
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::vector<double> v_th;        // per spiking layer
  std::vector<double> firing_rate;  // per spiking layer, on the test set
};

// Result of one simulated forward pass.
struct Collected {
  ForwardTrace trace;
  std::vector<double> output;  // o^L, [B, classes]
  std::size_t classes = 0;

  // Representation o^i of the i-th spiking layer.
  const std::vector<double>& representation(std::size_t i) const;
  std::vector<int> predictions() const;
};

// Simulates all time steps without gradient tracking and gathers every
// spiking layer's representation. frames: [N, B, ...].
Collected forward_collect(Network& net, const Tensor& frames, Mode mode, Rng& rng);

// Rebuilds the representation-level chain over `collected`, evaluates the
// cross-entropy of o^L against `labels` and back-propagates. Parameter
// gradients are overwritten (not accumulated) and left unscaled. Returns the
// loss.
double surrogate_backward(Network& net, const Collected& collected, std::span<const int> labels);

double scale_threshold_grad(double raw_grad, std::size_t batch_size, const NeuronParams& neuron,
                            ThresholdRule rule);

// coeff * sum(v_th^2).
double regularize_thresholds(std::span<const double> thresholds, double coeff);
// 2 * coeff * v_th.
double regularizer_grad(double v_th, double coeff);

// lr0 * (1 + cos(pi * e / horizon)) / 2, with e clamped to the horizon.
double cosine_lr(double epoch, const TrainConfig& config);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const TrainConfig& config);
  // Applies one update to every parameter that has requires_grad set.
  // Weight decay applies to everything except thresholds.
  void step(std::vector<Parameter>& params, double lr);

 private:
  OptimizerKind kind_;
  double momentum_, weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepStats {
  double loss = 0.0;
  double reg_loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

// One iteration: forward_collect, surrogate_backward, threshold gradient
// scaling plus regularizer, optimizer update, threshold floor. Throws
// NumericError on a non-finite loss or gradient.
StepStats train_step(Network& net, Optimizer& opt, const Tensor& frames, std::span<const int> labels,
                      const TrainConfig& config, double lr, Rng& rng);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> firing_rate;  // per spiking layer
  std::size_t samples = 0;
};

EvalResult evaluate(Network& net, const Dataset& data, std::size_t steps, std::size_t batch_size = 256);

// Epoch loop with cosine schedule, shuffling and augmentation. The callback
// receives one TrainMetrics per finished epoch.
class Trainer {
 public:
  Trainer(Network& net, TrainConfig config);
  TrainMetrics run_epoch(const Dataset& train, const Dataset* test);
  std::vector<TrainMetrics> fit(const Dataset& train, const Dataset* test,
                                const std::function<void(const TrainMetrics&)>& on_epoch = {});
  std::size_t epoch() const { return epoch_; }

 private:
  Network& net_;
  TrainConfig config_;
  Optimizer opt_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

// ---- metrics CSV -----------------------------------------------------------------------
std::string metrics_header(std::size_t spiking_layers);
std::string metrics_row(const TrainMetrics& m);

// ---- checkpoints -----------------------------------------------------------------------
// Little-endian: "DSR1", u32 version, u64 spec digest, u32 record count, then
// per record u32 name length, name bytes, u8 dtype (1 = f64), u32 rank,
// u32 extents, raw values. Parameters first, then buffers.
void save_checkpoint(const std::string& path, Network& net);
// Throws FormatError for malformed files and SpecError on a digest mismatch.
void load_checkpoint(const std::string& path, Network& net);

}  // namespace dsr
