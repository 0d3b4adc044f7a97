#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dsr/neuron.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

using Rng = std::mt19937_64;

// ---- declarative description ------------------------------------------------

enum class LayerKind { Linear, Conv, AvgPool, BatchNorm, Spiking, Residual, Dropout, Flatten };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  std::size_t in = 0;   // fc: declared input width, 0 = inferred
  std::size_t out = 0;  // fc units or conv filters
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;  // avgpool
  double p = 0.0;          // dropout probability
  bool bias = false;
  std::optional<NeuronParams> neuron;  // spiking: overrides the network default
  std::vector<LayerSpec> branch;       // residual
  std::vector<LayerSpec> shortcut;     // residual, empty = identity

  static LayerSpec fc(std::size_t out, std::size_t in = 0);
  static LayerSpec conv(std::size_t out, std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0);
  static LayerSpec avgpool(std::size_t window);
  static LayerSpec bn();
  static LayerSpec spiking();
  static LayerSpec flatten();
  static LayerSpec dropout(double p);
  static LayerSpec residual(std::vector<LayerSpec> branch, std::vector<LayerSpec> shortcut = {});
};

struct NetworkSpec {
  Shape input_shape;    // per sample, e.g. {1, 28, 28}
  NeuronParams neuron;  // default for every spiking layer
  std::vector<LayerSpec> layers;
};

// Stable 64-bit fingerprint of the architecture (layer structure, shapes and
// neuron model). Checkpoints carry it so a file is never loaded into a
// different network.
std::uint64_t spec_digest(const NetworkSpec& spec);

// Built-in architectures. `name` is one of: mlp, digits-cnn, vgg-11,
// preact-resnet-18, preact-resnet-20/32/44/56/110. Spiking layers follow
// every pooling stage and the classifier, with a batch norm between the last
// fully connected layer and the output neurons.
NetworkSpec preset_network(const std::string& name, const Shape& input_shape, std::size_t classes,
                           const NeuronParams& neuron);

// ---- runtime ------------------------------------------------------------------

enum class Mode { Train, Eval };

// What the temporal simulation leaves behind for the backward pass. Spiking
// layers keep only their representation and spike counts, so the size of a
// trace does not grow with the number of time steps (unless keep_spikes).
struct LayerRecord {
  std::vector<double> representation;  // [B, features...]
  Shape representation_shape;
  std::size_t spike_count = 0;
  std::size_t neuron_steps = 0;  // neurons x batch x steps
  std::optional<SpikeTrain> spikes;
  ChannelStats folded;        // batch norm, train mode
  std::vector<double> mask;   // dropout
};

struct ForwardTrace {
  std::size_t steps = 0;
  std::size_t batch = 0;
  Mode mode = Mode::Eval;
  std::vector<double> input_representation;
  Shape input_shape;  // [B, ...]
  std::vector<LayerRecord> records;  // indexed by Layer::id()
  std::vector<std::size_t> spiking_ids;  // in network order
};

enum class ParamKind { Weight, Bias, Threshold, BnGamma, BnBeta };

struct Parameter {
  std::string name;
  Tensor value;
  ParamKind kind;
};

struct Buffer {
  std::string name;
  std::vector<double>* data;
};

class Layer;
class SpikingLayer;

// Instantaneous-signal simulation state for one forward pass.
struct SimContext {
  std::size_t steps;
  std::size_t batch;
  Mode mode;
  Rng* rng;
  bool keep_spikes;
  ForwardTrace* trace;
};

// Representation-level (surrogate) pass state.
struct SurrogateContext {
  const ForwardTrace* trace;
  // true: every spiking layer outputs the simulated representation in the
  // forward value and the clamp-map derivative in backward. false: the pure
  // clamp chain (used by gradient checks and convergence analysis).
  bool substitute;
  Mode mode;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  // Folded input [N*B, ...] -> folded output. Runs without gradient tracking.
  virtual Tensor simulate(const Tensor& x, SimContext& ctx) = 0;
  // Representation input [B, ...] -> output, building the differentiation graph.
  virtual Tensor surrogate(const Tensor& z, SurrogateContext& ctx) = 0;
  virtual void collect(std::vector<Parameter>& params, std::vector<Buffer>& buffers,
                       const std::string& prefix) = 0;
  virtual void visit_spiking(std::vector<SpikingLayer*>& out) { (void)out; }

  std::size_t id() const { return id_; }
  void set_id(std::size_t id) { id_ = id; }

 private:
  std::size_t id_ = 0;
};

class SpikingLayer : public Layer {
 public:
  explicit SpikingLayer(const NeuronParams& params);
  LayerKind kind() const override { return LayerKind::Spiking; }
  Tensor simulate(const Tensor& x, SimContext& ctx) override;
  Tensor surrogate(const Tensor& z, SurrogateContext& ctx) override;
  void collect(std::vector<Parameter>& params, std::vector<Buffer>& buffers,
               const std::string& prefix) override;
  void visit_spiking(std::vector<SpikingLayer*>& out) override { out.push_back(this); }

  // Neuron parameters with the current (possibly trained) threshold.
  NeuronParams params() const;
  Tensor& threshold() { return threshold_; }
  const Tensor& threshold() const { return threshold_; }

 private:
  NeuronParams params_;
  Tensor threshold_;
};

class BatchNormLayer : public Layer {
 public:
  explicit BatchNormLayer(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  LayerKind kind() const override { return LayerKind::BatchNorm; }
  Tensor simulate(const Tensor& x, SimContext& ctx) override;
  Tensor surrogate(const Tensor& z, SurrogateContext& ctx) override;
  void collect(std::vector<Parameter>& params, std::vector<Buffer>& buffers,
               const std::string& prefix) override;

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  std::vector<double>& running_mean() { return running_mean_; }
  std::vector<double>& running_var() { return running_var_; }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }

 private:
  Tensor gamma_;
  Tensor beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  double eps_;
  double momentum_;
};

// Time-folded batch normalization. `x` is [N*B, C, ...] with time and batch
// already merged. Train mode normalizes with statistics over the folded axis
// (and spatial axes) and updates the running estimates; eval mode uses the
// running estimates. Returns the normalized tensor; `stats_out` receives the
// folded statistics in train mode.
Tensor bn_timefold(const Tensor& x, BatchNormLayer& bn, Mode mode, ChannelStats* stats_out = nullptr);

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  ~Network();

  const NetworkSpec& spec() const { return spec_; }
  NeuronModel model() const { return spec_.neuron.model; }
  std::size_t output_width() const { return output_width_; }

  // frames: [N, B, ...input_shape]. Simulates every layer over all N steps
  // (layer by layer, which is equivalent to step by step for a feedforward
  // network) starting from zero membrane potentials.
  ForwardTrace simulate(const Tensor& frames, Mode mode, Rng& rng, bool keep_spikes = false);

  // Representation-level pass over a trace. Returns the output representation
  // o^L [B, classes] attached to the differentiation graph.
  Tensor surrogate(const ForwardTrace& trace, bool substitute = true);
  // Pure clamp chain from an explicit input representation.
  Tensor surrogate_chain(const Tensor& input_representation, Mode mode);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  std::vector<SpikingLayer*>& spiking_layers() { return spiking_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

  Parameter* find_parameter(const std::string& name);
  void zero_grad();
  // Copies parameter values and buffers from a network with the same spec.
  void load_state_from(const Network& other);

 private:
  void build(std::uint64_t seed);

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::vector<SpikingLayer*> spiking_;
  std::size_t layer_count_ = 0;
  std::size_t output_width_ = 0;
};

Network build_network(const NetworkSpec& spec, std::uint64_t seed = 0);

// Per-layer spike trains of one forward pass, layer order. Each train is
// laid out [N, B * features].
std::vector<SpikeTrain> network_time_forward(Network& net, const Tensor& frames, Mode mode = Mode::Eval);

}  // namespace dsr
