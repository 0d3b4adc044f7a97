#include "dsr/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "dsr/errors.hpp"

namespace dsr {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::SgdMomentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw ParameterError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(ThresholdRule rule) {
  switch (rule) {
    case ThresholdRule::None: return "none";
    case ThresholdRule::Batch: return "batch";
    case ThresholdRule::BatchDt: return "batch-dt";
  }
  return "?";
}

ThresholdRule parse_threshold_rule(const std::string& name) {
  if (name == "none") return ThresholdRule::None;
  if (name == "batch") return ThresholdRule::Batch;
  if (name == "batch-dt") return ThresholdRule::BatchDt;
  throw ParameterError("unknown threshold rule '" + name + "' (expected none, batch or batch-dt)");
}

void TrainConfig::validate() const {
  if (time_steps < 1) throw ParameterError("time_steps must be >= 1");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (!(threshold_floor > 0.0)) throw ParameterError("threshold_floor must be positive");
  if (!(threshold_l2 >= 0.0)) throw ParameterError("threshold_l2 must be >= 0");
  if (!(lr >= 0.0)) throw ParameterError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ParameterError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ParameterError("adam_eps must be positive");
  if (!(augment.hflip_prob >= 0.0 && augment.hflip_prob <= 1.0))
    throw ParameterError("hflip_prob must lie in [0, 1]");
}

// ---- forward / backward --------------------------------------------------------------

const std::vector<double>& Collected::representation(std::size_t i) const {
  if (i >= trace.spiking_ids.size()) throw UsageError("no spiking layer " + std::to_string(i));
  return trace.records[trace.spiking_ids[i]].representation;
}

std::vector<int> Collected::predictions() const {
  std::vector<int> out;
  const std::size_t b = output.size() / classes;
  for (std::size_t i = 0; i < b; ++i) {
    auto first = output.begin() + static_cast<std::ptrdiff_t>(i * classes);
    out.push_back(static_cast<int>(std::max_element(first, first + static_cast<std::ptrdiff_t>(classes)) - first));
  }
  return out;
}

Collected forward_collect(Network& net, const Tensor& frames, Mode mode, Rng& rng) {
  Collected c;
  c.trace = net.simulate(frames, mode, rng);
  c.output = c.trace.records[c.trace.spiking_ids.back()].representation;
  c.classes = net.output_width();
  return c;
}

double surrogate_backward(Network& net, const Collected& collected, std::span<const int> labels) {
  if (collected.trace.spiking_ids.empty() || collected.output.empty())
    throw UsageError("surrogate_backward: no representations collected");
  if (labels.size() != collected.trace.batch)
    throw DimensionError("surrogate_backward: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(collected.trace.batch));
  net.zero_grad();
  const Tensor logits = net.surrogate(collected.trace, true);
  const Tensor loss = softmax_cross_entropy(logits, labels);
  loss.backward();
  return loss.item();
}

double scale_threshold_grad(double raw_grad, std::size_t batch_size, const NeuronParams& neuron,
                            ThresholdRule rule) {
  if (batch_size < 1) throw ParameterError("scale_threshold_grad: batch_size must be >= 1");
  switch (rule) {
    case ThresholdRule::None: return raw_grad;
    case ThresholdRule::Batch: return raw_grad / static_cast<double>(batch_size);
    case ThresholdRule::BatchDt: {
      const double g = raw_grad / static_cast<double>(batch_size);
      return neuron.model == NeuronModel::LIF ? g * neuron.dt : g;
    }
  }
  return raw_grad;
}

double regularize_thresholds(std::span<const double> thresholds, double coeff) {
  if (!(coeff >= 0.0)) throw ParameterError("regularizer coefficient must be >= 0");
  double s = 0.0;
  for (double v : thresholds) s += v * v;
  return coeff * s;
}

double regularizer_grad(double v_th, double coeff) { return 2.0 * coeff * v_th; }

double cosine_lr(double epoch, const TrainConfig& config) {
  const double h = static_cast<double>(config.schedule_horizon());
  if (h <= 0.0) return config.lr;
  const double e = std::clamp(epoch, 0.0, h);
  return config.lr * (1.0 + std::cos(std::numbers::pi * e / h)) / 2.0;
}

// ---- optimizer ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, const TrainConfig& config)
    : kind_(kind),
      momentum_(config.momentum),
      weight_decay_(config.weight_decay),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps) {}

void Optimizer::step(std::vector<Parameter>& params, double lr) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  ++t_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].value;
    if (!p.requires_grad()) continue;
    auto w = p.mutable_data();
    const std::vector<double> g0 = p.grad();
    const double decay = params[k].kind == ParamKind::Threshold ? 0.0 : weight_decay_;
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.empty()) m.assign(w.size(), 0.0);
    if (kind_ == OptimizerKind::SgdMomentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = g0[i] + decay * w[i];
        m[i] = momentum_ * m[i] + g;
        w[i] -= lr * m[i];
      }
    } else {
      if (v.empty()) v.assign(w.size(), 0.0);
      const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = g0[i] + decay * w[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }
}

// ---- training step -------------------------------------------------------------------------

namespace {

void check_finite(const std::vector<Parameter>& params) {
  for (const auto& p : params) {
    if (!p.value.requires_grad()) continue;
    for (double g : p.value.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
}

}  // namespace

StepStats train_step(Network& net, Optimizer& opt, const Tensor& frames, std::span<const int> labels,
                      const TrainConfig& config, double lr, Rng& rng) {
  for (auto* s : net.spiking_layers()) s->threshold().set_requires_grad(config.train_threshold);

  const Collected c = forward_collect(net, frames, Mode::Train, rng);
  const double loss = surrogate_backward(net, c, labels);
  if (!std::isfinite(loss)) throw NumericError(fmt::format("non-finite training loss ({})", loss));

  StepStats r;
  r.loss = loss;
  r.count = labels.size();
  const auto pred = c.predictions();
  for (std::size_t i = 0; i < pred.size(); ++i) r.correct += pred[i] == labels[i] ? 1 : 0;

  std::vector<double> th;
  for (auto* s : net.spiking_layers()) {
    th.push_back(s->threshold().item());
    if (!config.train_threshold) continue;
    auto g = s->threshold().mutable_grad();
    g[0] = scale_threshold_grad(g[0], labels.size(), s->params(), config.threshold_rule) +
           regularizer_grad(th.back(), config.threshold_l2);
  }
  r.reg_loss = config.train_threshold ? regularize_thresholds(th, config.threshold_l2) : 0.0;
  check_finite(net.parameters());

  opt.step(net.parameters(), lr);
  for (auto* s : net.spiking_layers()) {
    auto v = s->threshold().mutable_data();
    v[0] = std::max(v[0], config.threshold_floor);
  }
  return r;
}

// ---- evaluation ------------------------------------------------------------------------------

EvalResult evaluate(Network& net, const Dataset& data, std::size_t steps, std::size_t batch_size) {
  if (data.size() == 0) throw ParameterError("evaluate: empty dataset");
  if (batch_size < 1) throw ParameterError("evaluate: batch_size must be >= 1");
  const std::size_t layers = net.spiking_layers().size();
  std::vector<double> spikes(layers, 0.0), slots(layers, 0.0);
  std::size_t correct = 0;
  Rng rng(0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Collected c = forward_collect(net, make_batch(data, idx, steps), Mode::Eval, rng);
    const auto pred = c.predictions();
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]] ? 1 : 0;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& rec = c.trace.records[c.trace.spiking_ids[l]];
      spikes[l] += static_cast<double>(rec.spike_count);
      slots[l] += static_cast<double>(rec.neuron_steps);
    }
  }
  EvalResult r;
  r.samples = data.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  for (std::size_t l = 0; l < layers; ++l) r.firing_rate.push_back(spikes[l] / slots[l]);
  return r;
}

// ---- trainer -----------------------------------------------------------------------------------

Trainer::Trainer(Network& net, TrainConfig config)
    : net_(net), config_(std::move(config)), opt_(config_.optimizer, config_), rng_(config_.seed) {
  config_.validate();
}

TrainMetrics Trainer::run_epoch(const Dataset& train, const Dataset* test) {
  if (train.size() == 0) throw ParameterError("training set is empty");
  TrainMetrics m;
  m.epoch = epoch_ + 1;
  m.lr = cosine_lr(static_cast<double>(epoch_), config_);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  double loss_sum = 0.0, reg_sum = 0.0;
  std::size_t correct = 0, seen = 0, batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    if (end - start < 2 && seen > 0) break;  // a single-sample batch has no batch statistics
    std::span<const std::size_t> idx(order.data() + start, end - start);
    const Tensor frames = make_batch(train, idx, config_.time_steps, config_.augment, &rng_);
    const auto labels = batch_labels(train, idx);
    const StepStats r = train_step(net_, opt_, frames, labels, config_, m.lr, rng_);
    loss_sum += r.loss * static_cast<double>(r.count);
    reg_sum += r.reg_loss;
    correct += r.correct;
    seen += r.count;
    ++batches;
  }
  m.train_loss = loss_sum / static_cast<double>(seen);
  m.reg_loss = reg_sum / static_cast<double>(batches);
  m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
  for (auto* s : net_.spiking_layers()) m.v_th.push_back(s->threshold().item());
  const EvalResult e = evaluate(net_, test ? *test : train, config_.time_steps);
  m.test_acc = test ? e.accuracy : 0.0;
  m.firing_rate = e.firing_rate;
  ++epoch_;
  return m;
}

std::vector<TrainMetrics> Trainer::fit(const Dataset& train, const Dataset* test,
                                       const std::function<void(const TrainMetrics&)>& on_epoch) {
  std::vector<TrainMetrics> out;
  while (epoch_ < config_.epochs) {
    out.push_back(run_epoch(train, test));
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

// ---- metrics CSV -----------------------------------------------------------------------------

std::string metrics_header(std::size_t spiking_layers) {
  std::string h = "epoch,lr,train_loss,reg_loss,train_acc,test_acc";
  for (std::size_t i = 0; i < spiking_layers; ++i) h += fmt::format(",vth_{}", i);
  for (std::size_t i = 0; i < spiking_layers; ++i) h += fmt::format(",rate_{}", i);
  return h;
}

std::string metrics_row(const TrainMetrics& m) {
  std::string r = fmt::format("{},{},{},{},{},{}", m.epoch, m.lr, m.train_loss, m.reg_loss, m.train_acc, m.test_acc);
  for (double v : m.v_th) r += fmt::format(",{}", v);
  for (double v : m.firing_rate) r += fmt::format(",{}", v);
  return r;
}

}  // namespace dsr
