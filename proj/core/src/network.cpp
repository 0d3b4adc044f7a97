#include "dsr/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dsr/errors.hpp"
#include "dsr/representation.hpp"

namespace dsr {

// ---- spec helpers ---------------------------------------------------------------

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return "fc";
    case LayerKind::Conv: return "conv";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::BatchNorm: return "bn";
    case LayerKind::Spiking: return "spiking";
    case LayerKind::Residual: return "residual";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (auto k : {LayerKind::Linear, LayerKind::Conv, LayerKind::AvgPool, LayerKind::BatchNorm,
                 LayerKind::Spiking, LayerKind::Residual, LayerKind::Dropout, LayerKind::Flatten})
    if (to_string(k) == name) return k;
  throw SpecError("unknown layer type '" + name + "'");
}

LayerSpec LayerSpec::fc(std::size_t out, std::size_t in) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.out = out;
  s.in = in;
  return s;
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.out = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::avgpool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::AvgPool;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::bn() {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  return s;
}

LayerSpec LayerSpec::spiking() {
  LayerSpec s;
  s.kind = LayerKind::Spiking;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::dropout(double p) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.p = p;
  return s;
}

LayerSpec LayerSpec::residual(std::vector<LayerSpec> branch, std::vector<LayerSpec> shortcut) {
  LayerSpec s;
  s.kind = LayerKind::Residual;
  s.branch = std::move(branch);
  s.shortcut = std::move(shortcut);
  return s;
}

namespace {

void describe(std::ostream& os, const std::vector<LayerSpec>& layers) {
  for (const auto& l : layers) {
    os << to_string(l.kind) << '(' << l.in << ',' << l.out << ',' << l.kernel << ',' << l.stride << ','
       << l.padding << ',' << l.window << ',' << l.p << ',' << l.bias << ')';
    if (l.kind == LayerKind::Residual) {
      os << "{";
      describe(os, l.branch);
      os << "|";
      describe(os, l.shortcut);
      os << "}";
    }
    os << ';';
  }
}

}  // namespace

std::uint64_t spec_digest(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "in" << shape_string(spec.input_shape) << ";model=" << to_string(spec.neuron.model) << ";";
  describe(os, spec.layers);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- presets --------------------------------------------------------------------------

namespace {

void add_classifier(std::vector<LayerSpec>& layers, std::size_t classes) {
  layers.push_back(LayerSpec::flatten());
  layers.push_back(LayerSpec::fc(classes));
  layers.push_back(LayerSpec::bn());
  layers.push_back(LayerSpec::spiking());
}

std::vector<LayerSpec> preact_block(std::size_t in_ch, std::size_t out_ch, std::size_t stride) {
  std::vector<LayerSpec> branch{LayerSpec::bn(),          LayerSpec::spiking(),
                                LayerSpec::conv(out_ch, 3, stride, 1), LayerSpec::bn(),
                                LayerSpec::spiking(),     LayerSpec::conv(out_ch, 3, 1, 1)};
  std::vector<LayerSpec> shortcut;
  if (stride != 1 || in_ch != out_ch) shortcut.push_back(LayerSpec::conv(out_ch, 1, stride, 0));
  return {LayerSpec::residual(std::move(branch), std::move(shortcut))};
}

NetworkSpec preact_resnet(const std::vector<std::size_t>& channels, std::size_t blocks_per_group,
                          const Shape& input, std::size_t classes, const NeuronParams& neuron) {
  if (input.size() != 3) throw SpecError("resnet presets expect [C,H,W] input");
  NetworkSpec spec{input, neuron, {}};
  spec.layers.push_back(LayerSpec::conv(channels[0], 3, 1, 1));
  std::size_t ch = channels[0];
  std::size_t side = input[1];
  for (std::size_t g = 0; g < channels.size(); ++g) {
    for (std::size_t b = 0; b < blocks_per_group; ++b) {
      const std::size_t stride = (g > 0 && b == 0) ? 2 : 1;
      for (auto& l : preact_block(ch, channels[g], stride)) spec.layers.push_back(std::move(l));
      ch = channels[g];
      if (stride == 2) side = (side + 1) / 2;
    }
  }
  spec.layers.push_back(LayerSpec::bn());
  spec.layers.push_back(LayerSpec::spiking());
  spec.layers.push_back(LayerSpec::avgpool(side));
  spec.layers.push_back(LayerSpec::spiking());
  add_classifier(spec.layers, classes);
  return spec;
}

}  // namespace

NetworkSpec preset_network(const std::string& name, const Shape& input, std::size_t classes,
                           const NeuronParams& neuron) {
  if (classes < 2) throw SpecError("presets need at least two classes");
  if (name == "mlp") {
    NetworkSpec spec{input, neuron, {LayerSpec::flatten(), LayerSpec::fc(128), LayerSpec::bn(),
                                     LayerSpec::spiking()}};
    add_classifier(spec.layers, classes);
    return spec;
  }
  if (name == "digits-cnn") {
    NetworkSpec spec{input, neuron, {}};
    for (std::size_t c : {std::size_t{16}, std::size_t{32}}) {
      spec.layers.push_back(LayerSpec::conv(c, 3, 1, 1));
      spec.layers.push_back(LayerSpec::bn());
      spec.layers.push_back(LayerSpec::spiking());
      spec.layers.push_back(LayerSpec::avgpool(2));
      spec.layers.push_back(LayerSpec::spiking());
    }
    spec.layers.push_back(LayerSpec::flatten());
    spec.layers.push_back(LayerSpec::fc(64));
    spec.layers.push_back(LayerSpec::bn());
    spec.layers.push_back(LayerSpec::spiking());
    spec.layers.push_back(LayerSpec::fc(classes));
    spec.layers.push_back(LayerSpec::bn());
    spec.layers.push_back(LayerSpec::spiking());
    return spec;
  }
  if (name == "vgg-11") {
    if (input.size() != 3) throw SpecError("vgg-11 expects [C,H,W] input");
    NetworkSpec spec{input, neuron, {}};
    const int M = 0;
    const std::vector<int> cfg{64, M, 128, M, 256, 256, M, 512, 512, M, 512, 512, M};
    std::size_t side = input[1];
    for (int v : cfg) {
      if (v == M) {
        if (side % 2 != 0 || side < 2) continue;
        spec.layers.push_back(LayerSpec::avgpool(2));
        spec.layers.push_back(LayerSpec::spiking());
        side /= 2;
      } else {
        spec.layers.push_back(LayerSpec::conv(static_cast<std::size_t>(v), 3, 1, 1));
        spec.layers.push_back(LayerSpec::bn());
        spec.layers.push_back(LayerSpec::spiking());
        spec.layers.push_back(LayerSpec::dropout(0.1));
      }
    }
    add_classifier(spec.layers, classes);
    return spec;
  }
  if (name == "preact-resnet-18") return preact_resnet({64, 128, 256, 512}, 2, input, classes, neuron);
  for (std::size_t depth : {20, 32, 44, 56, 110})
    if (name == "preact-resnet-" + std::to_string(depth))
      return preact_resnet({16, 32, 64}, (depth - 2) / 6, input, classes, neuron);
  throw SpecError("unknown network preset '" + name + "'");
}

// ---- layers -----------------------------------------------------------------------------

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

Shape with_leading(std::size_t lead, const Shape& tail) {
  Shape s{lead};
  s.insert(s.end(), tail.begin(), tail.end());
  return s;
}

Shape tail_of(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

class LinearLayer final : public Layer {
 public:
  LinearLayer(std::size_t in, std::size_t out, bool bias, Rng& rng)
      : weight_(he_normal(Shape{out, in}, in, rng)) {
    if (bias) bias_ = Tensor(Shape{out}, 0.0).set_requires_grad(true);
  }
  LayerKind kind() const override { return LayerKind::Linear; }
  Tensor simulate(const Tensor& x, SimContext&) override { return linear(x, weight_, bias_); }
  Tensor surrogate(const Tensor& z, SurrogateContext&) override { return linear(z, weight_, bias_); }
  void collect(std::vector<Parameter>& params, std::vector<Buffer>&, const std::string& prefix) override {
    params.push_back({prefix + "weight", weight_, ParamKind::Weight});
    if (bias_.defined()) params.push_back({prefix + "bias", bias_, ParamKind::Bias});
  }

 private:
  Tensor weight_;
  Tensor bias_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::size_t in_ch, const LayerSpec& s, Rng& rng)
      : weight_(he_normal(Shape{s.out, in_ch, s.kernel, s.kernel}, in_ch * s.kernel * s.kernel, rng)),
        options_{s.stride, s.padding} {
    if (s.bias) bias_ = Tensor(Shape{s.out}, 0.0).set_requires_grad(true);
  }
  LayerKind kind() const override { return LayerKind::Conv; }
  Tensor simulate(const Tensor& x, SimContext&) override { return conv2d(x, weight_, bias_, options_); }
  Tensor surrogate(const Tensor& z, SurrogateContext&) override {
    return conv2d(z, weight_, bias_, options_);
  }
  void collect(std::vector<Parameter>& params, std::vector<Buffer>&, const std::string& prefix) override {
    params.push_back({prefix + "weight", weight_, ParamKind::Weight});
    if (bias_.defined()) params.push_back({prefix + "bias", bias_, ParamKind::Bias});
  }

 private:
  Tensor weight_;
  Tensor bias_;
  Conv2dOptions options_;
};

class AvgPoolLayer final : public Layer {
 public:
  explicit AvgPoolLayer(std::size_t k) : k_(k) {}
  LayerKind kind() const override { return LayerKind::AvgPool; }
  Tensor simulate(const Tensor& x, SimContext&) override { return avg_pool2d(x, k_); }
  Tensor surrogate(const Tensor& z, SurrogateContext&) override { return avg_pool2d(z, k_); }
  void collect(std::vector<Parameter>&, std::vector<Buffer>&, const std::string&) override {}

 private:
  std::size_t k_;
};

class FlattenLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Flatten; }
  Tensor simulate(const Tensor& x, SimContext&) override { return flat(x); }
  Tensor surrogate(const Tensor& z, SurrogateContext&) override { return flat(z); }
  void collect(std::vector<Parameter>&, std::vector<Buffer>&, const std::string&) override {}

 private:
  static Tensor flat(const Tensor& x) { return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)}); }
};

// One mask per forward pass, shared by every time step.
class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(double p) : p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw SpecError("dropout probability must lie in [0, 1)");
  }
  LayerKind kind() const override { return LayerKind::Dropout; }
  Tensor simulate(const Tensor& x, SimContext& ctx) override {
    if (ctx.mode != Mode::Train || p_ == 0.0) return x;
    const std::size_t per_step = x.numel() / ctx.steps;
    std::vector<double> mask(per_step);
    std::bernoulli_distribution keep(1.0 - p_);
    for (auto& m : mask) m = keep(*ctx.rng) ? 1.0 / (1.0 - p_) : 0.0;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i % per_step];
    ctx.trace->records[id()].mask = std::move(mask);
    return Tensor(x.shape(), std::move(out));
  }
  Tensor surrogate(const Tensor& z, SurrogateContext& ctx) override {
    if (!ctx.trace || ctx.mode != Mode::Train) return z;
    const auto& mask = ctx.trace->records[id()].mask;
    if (mask.empty()) return z;
    return mul(z, Tensor(z.shape(), mask));
  }
  void collect(std::vector<Parameter>&, std::vector<Buffer>&, const std::string&) override {}

 private:
  double p_;
};

Tensor run_sequence_sim(std::vector<std::unique_ptr<Layer>>& seq, Tensor x, SimContext& ctx) {
  for (auto& l : seq) x = l->simulate(x, ctx);
  return x;
}

Tensor run_sequence_sur(std::vector<std::unique_ptr<Layer>>& seq, Tensor z, SurrogateContext& ctx) {
  for (auto& l : seq) z = l->surrogate(z, ctx);
  return z;
}

// Sum of a branch and a shortcut; both see the same input signal and their
// outputs (currents) are added before the next spiking layer.
class ResidualLayer final : public Layer {
 public:
  ResidualLayer(std::vector<std::unique_ptr<Layer>> branch, std::vector<std::unique_ptr<Layer>> shortcut)
      : branch_(std::move(branch)), shortcut_(std::move(shortcut)) {}
  LayerKind kind() const override { return LayerKind::Residual; }
  Tensor simulate(const Tensor& x, SimContext& ctx) override {
    return add(run_sequence_sim(branch_, x, ctx), run_sequence_sim(shortcut_, x, ctx));
  }
  Tensor surrogate(const Tensor& z, SurrogateContext& ctx) override {
    return add(run_sequence_sur(branch_, z, ctx), run_sequence_sur(shortcut_, z, ctx));
  }
  void collect(std::vector<Parameter>& params, std::vector<Buffer>& buffers,
               const std::string& prefix) override {
    for (std::size_t i = 0; i < branch_.size(); ++i)
      branch_[i]->collect(params, buffers, prefix + "branch." + std::to_string(i) + ".");
    for (std::size_t i = 0; i < shortcut_.size(); ++i)
      shortcut_[i]->collect(params, buffers, prefix + "shortcut." + std::to_string(i) + ".");
  }
  void visit_spiking(std::vector<SpikingLayer*>& out) override {
    for (auto& l : branch_) l->visit_spiking(out);
    for (auto& l : shortcut_) l->visit_spiking(out);
  }

 private:
  std::vector<std::unique_ptr<Layer>> branch_;
  std::vector<std::unique_ptr<Layer>> shortcut_;
};

}  // namespace

// ---- spiking layer --------------------------------------------------------------------------

SpikingLayer::SpikingLayer(const NeuronParams& params)
    : params_(params), threshold_(Tensor::scalar(params.v_th, true)) {
  params_.validate();
}

NeuronParams SpikingLayer::params() const {
  NeuronParams p = params_;
  p.v_th = threshold_.item();
  return p;
}

Tensor SpikingLayer::simulate(const Tensor& x, SimContext& ctx) {
  const NeuronParams p = params();
  p.validate();
  const std::size_t width = x.numel() / ctx.steps;
  auto currents = x.data();
  LayerSimulation sim = simulate_layer(NeuronState::zeros(width), currents, ctx.steps, p);

  const double amplitude = p.model == NeuronModel::LIF ? p.v_th / p.dt : p.v_th;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sim.spikes.bits[i] ? amplitude : 0.0;

  auto& rec = ctx.trace->records[id()];
  const Representation rep = p.model == NeuronModel::LIF ? rep_lif(sim.spikes, p.v_th, p.lambda(), p.dt)
                                                         : rep_if(sim.spikes, p.v_th);
  rec.representation = rep.o;
  rec.representation_shape = with_leading(ctx.batch, tail_of(x.shape()));
  rec.spike_count = sim.spikes.total();
  rec.neuron_steps = sim.spikes.bits.size();
  if (ctx.keep_spikes) rec.spikes = std::move(sim.spikes);
  return Tensor(x.shape(), std::move(out));
}

Tensor SpikingLayer::surrogate(const Tensor& z, SurrogateContext& ctx) {
  const bool lif = params_.model == NeuronModel::LIF;
  const Tensor pre = lif ? scale(z, 1.0 / params_.tau) : z;
  const Tensor hi = lif ? scale(threshold_, 1.0 / params_.dt) : threshold_;
  Tensor out = clamp(pre, Tensor::scalar(0.0), hi);
  if (!ctx.substitute) return out;
  if (!ctx.trace) throw UsageError("value substitution needs a forward trace");
  const auto& rec = ctx.trace->records[id()];
  if (rec.representation.size() != out.numel())
    throw UsageError("forward trace is missing the representation of spiking layer " +
                     std::to_string(id()));
  return substitute(out, rec.representation);
}

void SpikingLayer::collect(std::vector<Parameter>& params, std::vector<Buffer>&,
                           const std::string& prefix) {
  params.push_back({prefix + "v_th", threshold_, ParamKind::Threshold});
}

// ---- batch norm --------------------------------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::size_t channels, double eps, double momentum)
    : gamma_(Tensor(Shape{channels}, 1.0).set_requires_grad(true)),
      beta_(Tensor(Shape{channels}, 0.0).set_requires_grad(true)),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0),
      eps_(eps),
      momentum_(momentum) {
  if (!(eps > 0.0)) throw ParameterError("batch norm eps must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ParameterError("batch norm momentum must lie in (0, 1)");
}

Tensor bn_timefold(const Tensor& x, BatchNormLayer& bn, Mode mode, ChannelStats* stats_out) {
  if (x.rank() < 2 || x.dim(0) == 0) throw ParameterError("bn_timefold: empty folded batch");
  if (mode == Mode::Eval)
    return batch_norm_fixed(x, bn.gamma(), bn.beta(), bn.running_mean(), bn.running_var(), bn.eps());
  ChannelStats st = channel_stats(x);
  const double m = bn.momentum();
  const double unbias = st.count > 1 ? static_cast<double>(st.count) / static_cast<double>(st.count - 1) : 1.0;
  for (std::size_t c = 0; c < st.mean.size(); ++c) {
    bn.running_mean()[c] = (1.0 - m) * bn.running_mean()[c] + m * st.mean[c];
    bn.running_var()[c] = (1.0 - m) * bn.running_var()[c] + m * st.var[c] * unbias;
  }
  Tensor y = batch_norm_fixed(x, bn.gamma(), bn.beta(), st.mean, st.var, bn.eps());
  if (stats_out) *stats_out = std::move(st);
  return y;
}

Tensor BatchNormLayer::simulate(const Tensor& x, SimContext& ctx) {
  ChannelStats st;
  Tensor y = bn_timefold(x, *this, ctx.mode, &st);
  if (ctx.mode == Mode::Train) ctx.trace->records[id()].folded = std::move(st);
  return y;
}

Tensor BatchNormLayer::surrogate(const Tensor& z, SurrogateContext& ctx) {
  if (ctx.mode == Mode::Eval) return batch_norm_fixed(z, gamma_, beta_, running_mean_, running_var_, eps_);
  if (ctx.substitute && ctx.trace) {
    const auto& folded = ctx.trace->records[id()].folded;
    if (folded.var.size() != running_var_.size())
      throw UsageError("forward trace is missing batch statistics for layer " + std::to_string(id()));
    return batch_norm(z, gamma_, beta_, eps_, &folded.var);
  }
  return batch_norm(z, gamma_, beta_, eps_);
}

void BatchNormLayer::collect(std::vector<Parameter>& params, std::vector<Buffer>& buffers,
                             const std::string& prefix) {
  params.push_back({prefix + "gamma", gamma_, ParamKind::BnGamma});
  params.push_back({prefix + "beta", beta_, ParamKind::BnBeta});
  buffers.push_back({prefix + "running_mean", &running_mean_});
  buffers.push_back({prefix + "running_var", &running_var_});
}

// ---- builder ---------------------------------------------------------------------------------------

namespace {

struct Builder {
  const NetworkSpec& spec;
  Rng rng;
  std::size_t next_id = 0;

  std::unique_ptr<Layer> make(const LayerSpec& s, Shape& shape, const std::string& where) {
    auto fail = [&](const std::string& msg) -> SpecError {
      return SpecError(where + " (" + to_string(s.kind) + "): " + msg + ", input shape " + shape_string(shape));
    };
    std::unique_ptr<Layer> layer;
    switch (s.kind) {
      case LayerKind::Linear: {
        if (shape.size() != 1) throw fail("fc needs a flat input (insert flatten)");
        if (s.out == 0) throw fail("fc needs a positive output width");
        if (s.in != 0 && s.in != shape[0])
          throw fail("declared input width " + std::to_string(s.in) + " does not match");
        layer = std::make_unique<LinearLayer>(shape[0], s.out, s.bias, rng);
        shape = {s.out};
        break;
      }
      case LayerKind::Conv: {
        if (shape.size() != 3) throw fail("conv needs [C,H,W] input");
        if (s.out == 0 || s.kernel == 0 || s.stride == 0) throw fail("conv sizes must be positive");
        if (s.kernel > shape[1] + 2 * s.padding || s.kernel > shape[2] + 2 * s.padding)
          throw fail("kernel larger than padded input");
        layer = std::make_unique<ConvLayer>(shape[0], s, rng);
        shape = {s.out, (shape[1] + 2 * s.padding - s.kernel) / s.stride + 1,
                 (shape[2] + 2 * s.padding - s.kernel) / s.stride + 1};
        break;
      }
      case LayerKind::AvgPool: {
        if (shape.size() != 3) throw fail("avgpool needs [C,H,W] input");
        if (s.window == 0 || shape[1] % s.window || shape[2] % s.window)
          throw fail("spatial extents not divisible by window " + std::to_string(s.window));
        layer = std::make_unique<AvgPoolLayer>(s.window);
        shape = {shape[0], shape[1] / s.window, shape[2] / s.window};
        break;
      }
      case LayerKind::BatchNorm:
        if (shape.empty()) throw fail("bn needs a channel axis");
        layer = std::make_unique<BatchNormLayer>(shape[0]);
        break;
      case LayerKind::Spiking: {
        NeuronParams p = s.neuron.value_or(spec.neuron);
        if (p.model != spec.neuron.model) throw fail("mixed IF/LIF networks are not supported");
        try {
          p.validate();
        } catch (const ParameterError& e) {
          throw fail(e.what());
        }
        layer = std::make_unique<SpikingLayer>(p);
        break;
      }
      case LayerKind::Dropout:
        if (!(s.p >= 0.0 && s.p < 1.0)) throw fail("dropout probability must lie in [0, 1)");
        layer = std::make_unique<DropoutLayer>(s.p);
        break;
      case LayerKind::Flatten:
        layer = std::make_unique<FlattenLayer>();
        shape = {shape_numel(shape)};
        break;
      case LayerKind::Residual: {
        const std::size_t id = next_id++;
        Shape branch_shape = shape;
        Shape short_shape = shape;
        auto branch = make_sequence(s.branch, branch_shape, where + ".branch");
        auto shortcut = make_sequence(s.shortcut, short_shape, where + ".shortcut");
        if (branch_shape != short_shape)
          throw fail("branch output " + shape_string(branch_shape) + " != shortcut output " +
                     shape_string(short_shape));
        auto res = std::make_unique<ResidualLayer>(std::move(branch), std::move(shortcut));
        res->set_id(id);
        shape = branch_shape;
        return res;
      }
    }
    layer->set_id(next_id++);
    return layer;
  }

  std::vector<std::unique_ptr<Layer>> make_sequence(const std::vector<LayerSpec>& specs, Shape& shape,
                                                    const std::string& where) {
    std::vector<std::unique_ptr<Layer>> out;
    for (std::size_t i = 0; i < specs.size(); ++i)
      out.push_back(make(specs[i], shape, where + "[" + std::to_string(i) + "]"));
    return out;
  }
};

}  // namespace

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) { build(seed); }

Network::Network(const Network& other) : spec_(other.spec_) {
  build(0);
  load_state_from(other);
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Network::~Network() = default;

void Network::build(std::uint64_t seed) {
  if (spec_.input_shape.empty()) throw SpecError("network input shape is empty");
  for (auto d : spec_.input_shape)
    if (d == 0) throw SpecError("network input extents must be positive");
  if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::Spiking)
    throw SpecError("the last layer must be spiking (the network outputs spike trains)");
  try {
    spec_.neuron.validate();
  } catch (const ParameterError& e) {
    throw SpecError(std::string("network neuron parameters: ") + e.what());
  }
  Builder b{spec_, Rng(seed)};
  Shape shape = spec_.input_shape;
  layers_ = b.make_sequence(spec_.layers, shape, "layers");
  if (shape.size() != 1) throw SpecError("network output must be flat, got " + shape_string(shape));
  output_width_ = shape[0];
  layer_count_ = b.next_id;

  params_.clear();
  buffers_.clear();
  spiking_.clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect(params_, buffers_, "layers." + std::to_string(i) + ".");
    layers_[i]->visit_spiking(spiking_);
  }
}

Parameter* Network::find_parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void Network::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void Network::load_state_from(const Network& other) {
  if (spec_digest(spec_) != spec_digest(other.spec_) || params_.size() != other.params_.size())
    throw SpecError("cannot copy state between different architectures");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].value.mutable_data();
    auto src = other.params_[i].value.data();
    std::copy(src.begin(), src.end(), dst.begin());
    params_[i].value.set_requires_grad(other.params_[i].value.requires_grad());
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) *buffers_[i].data = *other.buffers_[i].data;
}

ForwardTrace Network::simulate(const Tensor& frames, Mode mode, Rng& rng, bool keep_spikes) {
  const std::size_t in_rank = spec_.input_shape.size();
  if (frames.rank() != in_rank + 2 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), frames.shape().begin() + 2))
    throw DimensionError("frames " + shape_string(frames.shape()) + " do not match [N, B] + " +
                         shape_string(spec_.input_shape));
  const std::size_t steps = frames.dim(0);
  const std::size_t batch = frames.dim(1);
  if (steps < 1) throw ParameterError("need at least one time step");

  NoGradGuard no_grad;
  ForwardTrace trace;
  trace.steps = steps;
  trace.batch = batch;
  trace.mode = mode;
  trace.records.resize(layer_count_);
  for (auto* s : spiking_) trace.spiking_ids.push_back(s->id());

  const NeuronParams& np = spec_.neuron;
  const Representation in_rep = rep_input(frames.data(), steps, np.model, np.lambda(), np.dt);
  trace.input_representation = in_rep.o;
  trace.input_shape = with_leading(batch, spec_.input_shape);

  std::vector<double> signal(frames.data().begin(), frames.data().end());
  if (np.model == NeuronModel::LIF)
    for (auto& v : signal) v /= np.dt;
  Tensor x(with_leading(steps * batch, spec_.input_shape), std::move(signal));

  SimContext ctx{steps, batch, mode, &rng, keep_spikes, &trace};
  for (auto& l : layers_) x = l->simulate(x, ctx);
  return trace;
}

Tensor Network::surrogate(const ForwardTrace& trace, bool substitute) {
  if (trace.records.size() != layer_count_) throw UsageError("trace does not belong to this network");
  Tensor z(trace.input_shape, trace.input_representation);
  SurrogateContext ctx{&trace, substitute, trace.mode};
  for (auto& l : layers_) z = l->surrogate(z, ctx);
  return z;
}

Tensor Network::surrogate_chain(const Tensor& input_representation, Mode mode) {
  SurrogateContext ctx{nullptr, false, mode};
  Tensor z = input_representation;
  for (auto& l : layers_) z = l->surrogate(z, ctx);
  return z;
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) { return Network(spec, seed); }

std::vector<SpikeTrain> network_time_forward(Network& net, const Tensor& frames, Mode mode) {
  Rng rng(0);
  ForwardTrace trace = net.simulate(frames, mode, rng, true);
  std::vector<SpikeTrain> out;
  for (auto id : trace.spiking_ids) out.push_back(std::move(*trace.records[id].spikes));
  return out;
}

}  // namespace dsr
