#include "dsr/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dsr/errors.hpp"

namespace dsr {

using json = nlohmann::json;

namespace {

// Object reader that remembers which keys were consumed, so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw SpecError(where_ + ": expected an object");
  }
  ~Section() = default;

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw SpecError(where_ + "." + key + ": " + e.what());
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw SpecError(where_ + ": unknown key '" + it.key() + "'");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_neuron(Section& s, NeuronParams& p) {
  std::string model = to_string(p.model);
  s.get("model", model);
  p.model = parse_neuron_model(model);
  s.get("v_th", p.v_th);
  s.get("alpha", p.alpha);
  s.get("tau", p.tau);
  s.get("dt", p.dt);
  s.finish();
}

json write_neuron(const NeuronParams& p) {
  return json{{"model", to_string(p.model)}, {"v_th", p.v_th}, {"alpha", p.alpha}, {"tau", p.tau}, {"dt", p.dt}};
}

std::vector<LayerSpec> read_layers(const json& arr, const std::string& where, const NeuronParams& base);

LayerSpec read_layer(const json& j, const std::string& where, const NeuronParams& base) {
  Section s(j, where);
  std::string type;
  s.get("type", type);
  if (type.empty()) throw SpecError(where + ": missing 'type'");
  LayerSpec l;
  l.kind = parse_layer_kind(type);
  switch (l.kind) {
    case LayerKind::Linear:
      s.get("in", l.in);
      s.get("out", l.out);
      s.get("bias", l.bias);
      break;
    case LayerKind::Conv:
      s.get("out", l.out);
      s.get("kernel", l.kernel);
      s.get("stride", l.stride);
      s.get("padding", l.padding);
      s.get("bias", l.bias);
      break;
    case LayerKind::AvgPool:
      s.get("window", l.window);
      break;
    case LayerKind::Dropout:
      s.get("p", l.p);
      break;
    case LayerKind::Spiking:
      if (s.has("neuron")) {
        NeuronParams p = base;
        Section ns(s.raw("neuron"), where + ".neuron");
        read_neuron(ns, p);
        l.neuron = p;
      }
      break;
    case LayerKind::Residual:
      if (s.has("branch")) l.branch = read_layers(s.raw("branch"), where + ".branch", base);
      if (s.has("shortcut")) l.shortcut = read_layers(s.raw("shortcut"), where + ".shortcut", base);
      break;
    case LayerKind::BatchNorm:
    case LayerKind::Flatten:
      break;
  }
  s.finish();
  return l;
}

std::vector<LayerSpec> read_layers(const json& arr, const std::string& where, const NeuronParams& base) {
  if (!arr.is_array()) throw SpecError(where + ": expected an array of layers");
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(read_layer(arr[i], where + "[" + std::to_string(i) + "]", base));
  return out;
}

json write_layers(const std::vector<LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) {
    json j{{"type", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::Linear:
        j["in"] = l.in;
        j["out"] = l.out;
        j["bias"] = l.bias;
        break;
      case LayerKind::Conv:
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        j["bias"] = l.bias;
        break;
      case LayerKind::AvgPool: j["window"] = l.window; break;
      case LayerKind::Dropout: j["p"] = l.p; break;
      case LayerKind::Spiking:
        if (l.neuron) j["neuron"] = write_neuron(*l.neuron);
        break;
      case LayerKind::Residual:
        j["branch"] = write_layers(l.branch);
        j["shortcut"] = write_layers(l.shortcut);
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Flatten:
        break;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

void apply_lif_row(RunConfig& c, std::size_t steps) {
  c.neuron = NeuronParams::lif_for_steps(steps);
  c.train.time_steps = steps;
  c.train.threshold_floor = default_threshold_floor(NeuronModel::LIF, steps);
  if (steps <= 5) c.train.lr = 0.05;
}

}  // namespace

// ---- presets ----------------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"if-default", "lif-n20", "lif-n15", "lif-n10", "lif-n5",
          "cifar10",    "cifar100", "imagenet", "dvs-cifar10", "digits"};
}

void apply_preset(RunConfig& c, const std::string& name) {
  auto& t = c.train;
  if (name == "if-default") {
    c.neuron = NeuronParams::if_default();
    t.threshold_floor = default_threshold_floor(NeuronModel::IF, t.time_steps);
  } else if (name == "lif-n20") {
    apply_lif_row(c, 20);
  } else if (name == "lif-n15") {
    apply_lif_row(c, 15);
  } else if (name == "lif-n10") {
    apply_lif_row(c, 10);
  } else if (name == "lif-n5") {
    apply_lif_row(c, 5);
  } else if (name == "cifar10" || name == "cifar100") {
    t.optimizer = OptimizerKind::SgdMomentum;
    t.epochs = 200;
    t.lr = 0.1;
    t.batch_size = 128;
    t.augment = {4, 0.5};
    c.arch = "preact-resnet-18";
    c.classes = name == "cifar10" ? 10 : 100;
    c.data.format = "cifar";
    c.data.cifar_label_bytes = name == "cifar100" ? 2 : 1;
  } else if (name == "imagenet") {
    t.optimizer = OptimizerKind::Adam;
    t.epochs = 90;
    t.lr = 0.001;
    t.batch_size = 144;
    t.augment = {0, 0.5};
    c.classes = 1000;
  } else if (name == "dvs-cifar10") {
    t.optimizer = OptimizerKind::SgdMomentum;
    t.epochs = 300;
    t.lr = 0.05;
    t.batch_size = 128;
    t.augment = {4, 0.0};
    c.arch = "vgg-11";
    c.classes = 10;
    c.data.format = "frames";
    c.data.resize = 48;
  } else if (name == "digits") {
    t.optimizer = OptimizerKind::SgdMomentum;
    t.epochs = 40;
    t.lr = 0.1;
    t.batch_size = 32;
    t.augment = {0, 0.0};
    c.arch = "digits-cnn";
    c.classes = 10;
    c.data.format = "idx";
  } else {
    throw SpecError("unknown preset '" + name + "'");
  }
}

void RunConfig::validate() const {
  neuron.validate();
  train.validate();
  if (classes < 2) throw SpecError("network.classes must be >= 2");
  if (data.format != "idx" && data.format != "cifar" && data.format != "frames")
    throw SpecError("data.format must be idx, cifar or frames");
}

// ---- parse / dump ---------------------------------------------------------------------------------

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("config is not valid JSON: ") + e.what());
  }
  Section top(root, "config");
  RunConfig c;
  top.get("presets", c.presets);
  for (const auto& p : c.presets) apply_preset(c, p);

  if (top.has("neuron")) {
    Section s(top.raw("neuron"), "neuron");
    read_neuron(s, c.neuron);
  }
  if (top.has("network")) {
    Section s(top.raw("network"), "network");
    s.get("arch", c.arch);
    s.get("classes", c.classes);
    if (s.has("layers")) c.layers = read_layers(s.raw("layers"), "network.layers", c.neuron);
    s.finish();
  }
  if (top.has("train")) {
    Section s(top.raw("train"), "train");
    auto& t = c.train;
    s.get("time_steps", t.time_steps);
    s.get("train_threshold", t.train_threshold);
    s.get("threshold_floor", t.threshold_floor);
    s.get("threshold_l2", t.threshold_l2);
    std::string rule = to_string(t.threshold_rule);
    s.get("threshold_rule", rule);
    t.threshold_rule = parse_threshold_rule(rule);
    std::string opt = to_string(t.optimizer);
    s.get("optimizer", opt);
    t.optimizer = parse_optimizer(opt);
    s.get("lr", t.lr);
    s.get("momentum", t.momentum);
    s.get("weight_decay", t.weight_decay);
    s.get("adam_beta1", t.adam_beta1);
    s.get("adam_beta2", t.adam_beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("horizon", t.horizon);
    s.get("batch_size", t.batch_size);
    s.get("epochs", t.epochs);
    s.get("crop_pad", t.augment.crop_pad);
    s.get("hflip_prob", t.augment.hflip_prob);
    s.get("seed", t.seed);
    s.get("deterministic", t.deterministic);
    s.finish();
  }
  if (top.has("data")) {
    Section s(top.raw("data"), "data");
    auto& d = c.data;
    s.get("format", d.format);
    s.get("train_images", d.train_images);
    s.get("train_labels", d.train_labels);
    s.get("test_images", d.test_images);
    s.get("test_labels", d.test_labels);
    s.get("train_files", d.train_files);
    s.get("test_files", d.test_files);
    s.get("cifar_label_bytes", d.cifar_label_bytes);
    s.get("train_manifest", d.train_manifest);
    s.get("test_manifest", d.test_manifest);
    s.get("normalize", d.normalize);
    s.get("resize", d.resize);
    s.get("limit_train", d.limit_train);
    s.get("limit_test", d.limit_test);
    s.finish();
    for (auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels, &d.train_manifest,
                    &d.test_manifest})
      *p = resolve(*p, base_dir);
    for (auto& f : d.train_files) f = resolve(f, base_dir);
    for (auto& f : d.test_files) f = resolve(f, base_dir);
  }
  if (top.has("output")) {
    Section s(top.raw("output"), "output");
    s.get("save_every", c.save_every);
    s.finish();
  }
  top.finish();
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw SpecError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string dump_run_config(const RunConfig& c) {
  const auto& t = c.train;
  const auto& d = c.data;
  json root{
      {"presets", c.presets},
      {"network", {{"arch", c.arch}, {"classes", c.classes}, {"layers", write_layers(c.layers)}}},
      {"neuron", write_neuron(c.neuron)},
      {"train",
       {{"time_steps", t.time_steps},
        {"train_threshold", t.train_threshold},
        {"threshold_floor", t.threshold_floor},
        {"threshold_l2", t.threshold_l2},
        {"threshold_rule", to_string(t.threshold_rule)},
        {"optimizer", to_string(t.optimizer)},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"horizon", t.horizon},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"crop_pad", t.augment.crop_pad},
        {"hflip_prob", t.augment.hflip_prob},
        {"seed", t.seed},
        {"deterministic", t.deterministic}}},
      {"data",
       {{"format", d.format},
        {"train_images", d.train_images},
        {"train_labels", d.train_labels},
        {"test_images", d.test_images},
        {"test_labels", d.test_labels},
        {"train_files", d.train_files},
        {"test_files", d.test_files},
        {"cifar_label_bytes", d.cifar_label_bytes},
        {"train_manifest", d.train_manifest},
        {"test_manifest", d.test_manifest},
        {"normalize", d.normalize},
        {"resize", d.resize},
        {"limit_train", d.limit_train},
        {"limit_test", d.limit_test}}},
      {"output", {{"save_every", c.save_every}}}};
  return root.dump(2) + "\n";
}

NetworkSpec network_spec(const RunConfig& c, const Shape& input_shape) {
  if (c.layers.empty()) return preset_network(c.arch, input_shape, c.classes, c.neuron);
  return NetworkSpec{input_shape, c.neuron, c.layers};
}

// ---- data ------------------------------------------------------------------------------------------

namespace {

Dataset concat(std::vector<Dataset> parts) {
  Dataset out = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].sample_shape != out.sample_shape) throw FormatError("dataset parts have different shapes");
    out.values.insert(out.values.end(), parts[i].values.begin(), parts[i].values.end());
    out.labels.insert(out.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    out.classes = std::max(out.classes, parts[i].classes);
  }
  return out;
}

Dataset load_split(const DataConfig& c, Split split) {
  const bool train = split == Split::Train;
  if (c.format == "idx") {
    const auto& img = train ? c.train_images : c.test_images;
    const auto& lab = train ? c.train_labels : c.test_labels;
    if (img.empty() || lab.empty()) throw SpecError("data: idx format needs image and label paths");
    return load_idx(img, lab, split);
  }
  if (c.format == "cifar") {
    const auto& files = train ? c.train_files : c.test_files;
    if (files.empty()) throw SpecError("data: cifar format needs train_files / test_files");
    std::vector<Dataset> parts;
    for (const auto& f : files) parts.push_back(load_cifar_binary(f, split, c.cifar_label_bytes));
    return concat(std::move(parts));
  }
  const auto& manifest = train ? c.train_manifest : c.test_manifest;
  if (manifest.empty()) throw SpecError("data: frames format needs train_manifest / test_manifest");
  return load_frame_dataset(manifest, split);
}

void truncate(Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return;
  d.labels.resize(limit);
  d.values.resize(limit * d.sample_numel());
}

void resize_all(Dataset& d, std::size_t side) {
  if (side == 0) return;
  const std::size_t n = d.sample_numel();
  std::vector<double> out;
  Shape new_shape;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Tensor s(d.sample_shape, std::vector<double>(d.values.begin() + static_cast<std::ptrdiff_t>(i * n),
                                                 d.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
    Tensor r = resize_nearest(s, side, side);
    new_shape = r.shape();
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  d.values = std::move(out);
  d.sample_shape = new_shape;
}

}  // namespace

LoadedData load_data(const DataConfig& c) {
  LoadedData out{load_split(c, Split::Train), load_split(c, Split::Test), {}, {}};
  truncate(out.train, c.limit_train);
  truncate(out.test, c.limit_test);
  resize_all(out.train, c.resize);
  resize_all(out.test, c.resize);
  if (out.train.sample_shape != out.test.sample_shape)
    throw FormatError("train and test samples have different shapes");
  const std::size_t classes = std::max(out.train.classes, out.test.classes);
  out.train.classes = out.test.classes = classes;
  out.train.validate();
  out.test.validate();
  if (c.normalize) {
    channel_moments(out.train, out.mean, out.stddev);
    for (auto& s : out.stddev)
      if (s == 0.0) s = 1.0;
    normalize_dataset(out.train, out.mean, out.stddev);
    normalize_dataset(out.test, out.mean, out.stddev);
  }
  return out;
}

}  // namespace dsr
