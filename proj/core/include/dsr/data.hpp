#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsr/tensor.hpp"

namespace dsr {

enum class Split { Train, Test };

// Labelled samples stored contiguously. Static images have sample_shape
// [C, H, W]; event data stores pre-integrated frames with sample_shape
// [F, C, H, W] and `frames` = F.
struct Dataset {
  Shape sample_shape;
  std::vector<double> values;  // size() * numel(sample_shape)
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::Train;
  std::size_t frames = 0;  // 0 for static images

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(sample_shape); }
  // Shape of one input frame, i.e. sample_shape without the frame axis.
  Shape frame_shape() const;
  std::span<const double> sample(std::size_t i) const;
  // Throws InputError/FormatError when labels or sizes are inconsistent.
  void validate() const;
};

struct FrameSequence {
  Tensor frames;  // [F, C, H, W]
  std::size_t count() const { return frames.dim(0); }
};

// IDX pair (big-endian magic 0x803 images / 0x801 labels); pixels scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 Split split = Split::Train);
void write_idx(const std::string& images_path, const std::string& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels);

// CIFAR binary batch: records of `label_bytes` label bytes + 3x32x32 pixel
// bytes. CIFAR-10 uses 1; CIFAR-100 uses 2 (coarse, fine) and the last byte,
// the fine label, is kept.
Dataset load_cifar_binary(const std::string& path, Split split = Split::Train, std::size_t label_bytes = 1);
void write_cifar_binary(const std::string& path, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> pixels);

// "SNNF" file: magic, u32 rank, u32 extents, little-endian f32 payload.
// The first extent is time.
FrameSequence load_frames(const std::string& path);
void write_frames(const std::string& path, const Tensor& frames);

// Directory of SNNF files listed in `manifest` (one "<file> <label>" per line).
Dataset load_frame_dataset(const std::string& manifest, Split split = Split::Train);

// x replicated `steps` times along a new leading axis.
Tensor encode_static(const Tensor& x, std::size_t steps);
// First `steps` frames of a sequence, cycling when it is shorter.
Tensor align_frames(const Tensor& frames, std::size_t steps);

struct AugmentConfig {
  std::size_t crop_pad = 0;
  double hflip_prob = 0.0;
};

// Zero-pad by crop_pad, crop a random window of the original size and flip
// horizontally with probability hflip_prob. x is [C, H, W] or [F, C, H, W]
// (every frame gets the same crop and flip).
Tensor augment(const Tensor& x, const AugmentConfig& config, std::mt19937_64& rng);
// Same with an explicit offset and flip decision.
Tensor crop_flip(const Tensor& x, std::size_t pad, std::size_t dy, std::size_t dx, bool flip);

// (x - mean[c]) / std[c] over the channel axis of [C, H, W] or [F, C, H, W].
Tensor normalize(const Tensor& x, std::span<const double> mean, std::span<const double> stddev);
void normalize_dataset(Dataset& d, std::span<const double> mean, std::span<const double> stddev);
// Per-channel mean and (population) standard deviation over the whole dataset.
void channel_moments(const Dataset& d, std::vector<double>& mean, std::vector<double>& stddev);

// Nearest-neighbour resize of the two trailing axes.
Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width);

// Network input for a mini-batch: [steps, B, ...frame shape]. Static samples
// repeat every step; frame samples are cycled or truncated to `steps`.
// Augmentation is skipped when `rng` is null.
Tensor make_batch(const Dataset& d, std::span<const std::size_t> indices, std::size_t steps,
                  const AugmentConfig& aug = {}, std::mt19937_64* rng = nullptr);
std::vector<int> batch_labels(const Dataset& d, std::span<const std::size_t> indices);

}  // namespace dsr
