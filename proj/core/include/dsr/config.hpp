#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dsr/data.hpp"
#include "dsr/engine.hpp"
#include "dsr/network.hpp"

namespace dsr {

struct DataConfig {
  std::string format = "idx";  // idx | cifar | frames
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar: one or more binary batches per split
  std::vector<std::string> train_files, test_files;
  std::size_t cifar_label_bytes = 1;  // 2 for CIFAR-100 (coarse + fine label)
  // frames: manifest files listing "<file.snnf> <label>"
  std::string train_manifest, test_manifest;
  bool normalize = true;         // per-channel zero mean, unit variance (train statistics)
  std::size_t resize = 0;        // square nearest-neighbour resize; 0 keeps the native size
  std::size_t limit_train = 0;   // use only the first k training samples; 0 = all
  std::size_t limit_test = 0;
};

// Everything a run needs. A JSON document with the sections
//   presets: [names...]   applied in order before any other key
//   network: {arch, classes, layers}
//   neuron:  {model, v_th, alpha, tau, dt}
//   train:   {time_steps, epochs, batch_size, lr, ...}
//   data:    {format, paths..., normalize, resize}
//   output:  {save_every}
// Unknown keys are rejected.
struct RunConfig {
  std::vector<std::string> presets;
  std::string arch = "digits-cnn";
  std::vector<LayerSpec> layers;  // explicit architecture; overrides arch when non-empty
  std::size_t classes = 10;
  NeuronParams neuron = NeuronParams::if_default();
  TrainConfig train;
  DataConfig data;
  std::size_t save_every = 0;  // checkpoint every k epochs; 0 = final only

  void validate() const;
};

// Names accepted in "presets": if-default, lif-n20, lif-n15, lif-n10, lif-n5
// (neuron tables) and cifar10, cifar100, imagenet, dvs-cifar10, digits
// (optimization tables).
std::vector<std::string> preset_names();
void apply_preset(RunConfig& config, const std::string& name);

// Relative data paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);
// Canonical JSON of the fully resolved config, presets already applied.
std::string dump_run_config(const RunConfig& config);

NetworkSpec network_spec(const RunConfig& config, const Shape& input_shape);

struct LoadedData {
  Dataset train;
  Dataset test;
  std::vector<double> mean, stddev;  // normalization applied to both splits
};
LoadedData load_data(const DataConfig& config);

}  // namespace dsr
