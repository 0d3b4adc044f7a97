#include "dsr/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dsr/errors.hpp"

namespace dsr {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for '" + path + "'");
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t read_le32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return std::uint32_t{b[off]} | (std::uint32_t{b[off + 1]} << 8) | (std::uint32_t{b[off + 2]} << 16) |
         (std::uint32_t{b[off + 3]} << 24);
}

void put_le32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

struct IdxHeader {
  std::vector<std::size_t> dims;
  std::size_t payload_offset;
};

IdxHeader parse_idx(const std::vector<std::uint8_t>& b, std::uint32_t magic, const std::string& path) {
  if (b.size() < 4) throw FormatError("'" + path + "': truncated IDX header");
  const std::uint32_t m = read_be32(b, 0);
  if (m != magic)
    throw FormatError("'" + path + "': bad IDX magic 0x" + [&] {
      std::ostringstream os;
      os << std::hex << m;
      return os.str();
    }());
  const std::size_t rank = magic & 0xff;
  if (b.size() < 4 + 4 * rank) throw FormatError("'" + path + "': truncated IDX header");
  IdxHeader h{{}, 4 + 4 * rank};
  std::size_t total = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    h.dims.push_back(read_be32(b, 4 + 4 * i));
    total *= h.dims.back();
  }
  if (b.size() != h.payload_offset + total)
    throw FormatError("'" + path + "': payload has " + std::to_string(b.size() - h.payload_offset) +
                      " bytes, header promises " + std::to_string(total));
  return h;
}

std::size_t infer_classes(const std::vector<int>& labels) {
  int hi = -1;
  for (int l : labels) hi = std::max(hi, l);
  return static_cast<std::size_t>(hi + 1);
}

}  // namespace

Shape Dataset::frame_shape() const {
  if (frames == 0) return sample_shape;
  return Shape(sample_shape.begin() + 1, sample_shape.end());
}

std::span<const double> Dataset::sample(std::size_t i) const {
  if (i >= size()) throw InputError("sample index " + std::to_string(i) + " out of range");
  const std::size_t n = sample_numel();
  return {values.data() + i * n, n};
}

void Dataset::validate() const {
  if (values.size() != labels.size() * sample_numel())
    throw FormatError("dataset values do not match sample count and shape");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

// ---- IDX ---------------------------------------------------------------------------

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  const IdxHeader ih = parse_idx(ib, 0x00000803, images_path);
  const IdxHeader lh = parse_idx(lb, 0x00000801, labels_path);
  if (ih.dims[0] != lh.dims[0])
    throw FormatError("image count " + std::to_string(ih.dims[0]) + " != label count " +
                      std::to_string(lh.dims[0]));
  if (ih.dims[0] == 0) throw FormatError("'" + images_path + "': no images");

  Dataset d;
  d.split = split;
  d.sample_shape = {1, ih.dims[1], ih.dims[2]};
  d.values.resize(ib.size() - ih.payload_offset);
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = ib[ih.payload_offset + i] / 255.0;
  d.labels.assign(lb.begin() + static_cast<std::ptrdiff_t>(lh.payload_offset), lb.end());
  d.classes = infer_classes(d.labels);
  return d;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> labels) {
  if (rows * cols * labels.size() != pixels.size())
    throw DimensionError("write_idx: pixel count does not match labels x rows x cols");
  std::vector<std::uint8_t> ib, lb;
  put_be32(ib, 0x00000803);
  put_be32(ib, static_cast<std::uint32_t>(labels.size()));
  put_be32(ib, static_cast<std::uint32_t>(rows));
  put_be32(ib, static_cast<std::uint32_t>(cols));
  ib.insert(ib.end(), pixels.begin(), pixels.end());
  put_be32(lb, 0x00000801);
  put_be32(lb, static_cast<std::uint32_t>(labels.size()));
  lb.insert(lb.end(), labels.begin(), labels.end());
  write_file(images_path, ib);
  write_file(labels_path, lb);
}

// ---- CIFAR -------------------------------------------------------------------------

namespace {
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
}  // namespace

Dataset load_cifar_binary(const std::string& path, Split split, std::size_t label_bytes) {
  if (label_bytes != 1 && label_bytes != 2) throw ParameterError("CIFAR records have 1 or 2 label bytes");
  const std::size_t record = kCifarPixels + label_bytes;
  const auto b = read_file(path);
  if (b.empty() || b.size() % record != 0)
    throw FormatError("'" + path + "': length " + std::to_string(b.size()) + " is not a multiple of " +
                      std::to_string(record));
  const std::size_t n = b.size() / record;
  Dataset d;
  d.split = split;
  d.sample_shape = {3, 32, 32};
  d.values.resize(n * kCifarPixels);
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * record;
    d.labels[r] = b[off + label_bytes - 1];
    for (std::size_t i = 0; i < kCifarPixels; ++i)
      d.values[r * kCifarPixels + i] = b[off + label_bytes + i] / 255.0;
  }
  d.classes = std::max<std::size_t>(10, infer_classes(d.labels));
  return d;
}

void write_cifar_binary(const std::string& path, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> pixels) {
  if (pixels.size() != labels.size() * kCifarPixels)
    throw DimensionError("write_cifar_binary: expected 3072 pixels per label");
  std::vector<std::uint8_t> b;
  b.reserve(labels.size() * (kCifarPixels + 1));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    b.push_back(labels[r]);
    b.insert(b.end(), pixels.begin() + static_cast<std::ptrdiff_t>(r * kCifarPixels),
             pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * kCifarPixels));
  }
  write_file(path, b);
}

// ---- SNNF frames ---------------------------------------------------------------------

FrameSequence load_frames(const std::string& path) {
  const auto b = read_file(path);
  if (b.size() < 8 || std::memcmp(b.data(), "SNNF", 4) != 0) throw FormatError("'" + path + "': bad SNNF magic");
  const std::uint32_t rank = read_le32(b, 4);
  if (rank < 1 || rank > 8) throw FormatError("'" + path + "': unsupported rank " + std::to_string(rank));
  if (b.size() < 8 + 4 * rank) throw FormatError("'" + path + "': truncated SNNF header");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = read_le32(b, 8 + 4 * i);
    if (shape[i] == 0) throw FormatError("'" + path + "': zero extent");
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t off = 8 + 4 * rank;
  if (b.size() != off + 4 * n)
    throw FormatError("'" + path + "': payload size does not match " + shape_string(shape));
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(read_le32(b, off + 4 * i));
    if (!std::isfinite(f)) throw FormatError("'" + path + "': non-finite frame value");
    values[i] = f;
  }
  return FrameSequence{Tensor(std::move(shape), std::move(values))};
}

void write_frames(const std::string& path, const Tensor& frames) {
  std::vector<std::uint8_t> b{'S', 'N', 'N', 'F'};
  put_le32(b, static_cast<std::uint32_t>(frames.rank()));
  for (auto d : frames.shape()) put_le32(b, static_cast<std::uint32_t>(d));
  for (double v : frames.data()) put_le32(b, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  write_file(path, b);
}

Dataset load_frame_dataset(const std::string& manifest, Split split) {
  std::ifstream in(manifest);
  if (!in) throw InputError("cannot open manifest '" + manifest + "'");
  const auto base = std::filesystem::path(manifest).parent_path();
  Dataset d;
  d.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string file;
    int label = -1;
    if (!(ls >> file >> label) || label < 0)
      throw FormatError(manifest + ":" + std::to_string(line_no) + ": expected '<file> <label>'");
    const FrameSequence seq = load_frames((base / file).string());
    if (seq.frames.rank() != 4) throw FormatError(file + ": frames must be [F, C, H, W]");
    if (d.labels.empty())
      d.sample_shape = seq.frames.shape();
    else if (seq.frames.shape() != d.sample_shape)
      throw FormatError(file + ": shape " + shape_string(seq.frames.shape()) + " differs from " +
                        shape_string(d.sample_shape));
    d.values.insert(d.values.end(), seq.frames.data().begin(), seq.frames.data().end());
    d.labels.push_back(label);
  }
  if (d.labels.empty()) throw FormatError("manifest '" + manifest + "' lists no samples");
  d.frames = d.sample_shape[0];
  d.classes = infer_classes(d.labels);
  return d;
}

// ---- transforms --------------------------------------------------------------------------

Tensor encode_static(const Tensor& x, std::size_t steps) {
  if (steps < 1) throw ParameterError("encode_static: steps must be >= 1");
  Shape shape{steps};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  std::vector<double> out;
  out.reserve(steps * x.numel());
  for (std::size_t n = 0; n < steps; ++n) out.insert(out.end(), x.data().begin(), x.data().end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor align_frames(const Tensor& frames, std::size_t steps) {
  if (steps < 1) throw ParameterError("align_frames: steps must be >= 1");
  const std::size_t f = frames.dim(0);
  const std::size_t per = frames.numel() / f;
  Shape shape = frames.shape();
  shape[0] = steps;
  std::vector<double> out(steps * per);
  for (std::size_t n = 0; n < steps; ++n)
    std::copy_n(frames.data().begin() + static_cast<std::ptrdiff_t>((n % f) * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(n * per));
  return Tensor(std::move(shape), std::move(out));
}

Tensor crop_flip(const Tensor& x, std::size_t pad, std::size_t dy, std::size_t dx, bool flip) {
  if (x.rank() < 3) throw DimensionError("crop_flip expects [..., H, W] with a channel axis");
  const std::size_t h = x.dim(x.rank() - 2);
  const std::size_t w = x.dim(x.rank() - 1);
  if (dy > 2 * pad || dx > 2 * pad) throw ParameterError("crop_flip: offset exceeds padding");
  const std::size_t planes = x.numel() / (h * w);
  std::vector<double> out(x.numel(), 0.0);
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(i + dy) - static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t oj = flip ? w - 1 - j : j;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(j + dx) - static_cast<std::ptrdiff_t>(pad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out[(p * h + i) * w + oj] = in[(p * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  return Tensor(x.shape(), std::move(out));
}

Tensor augment(const Tensor& x, const AugmentConfig& config, std::mt19937_64& rng) {
  if (!(config.hflip_prob >= 0.0 && config.hflip_prob <= 1.0))
    throw ParameterError("augment: hflip_prob must lie in [0, 1]");
  std::size_t dy = config.crop_pad, dx = config.crop_pad;
  if (config.crop_pad > 0) {
    std::uniform_int_distribution<std::size_t> off(0, 2 * config.crop_pad);
    dy = off(rng);
    dx = off(rng);
  }
  bool flip = false;
  if (config.hflip_prob > 0.0) flip = std::bernoulli_distribution(config.hflip_prob)(rng);
  if (config.crop_pad == 0 && !flip) return x.clone();
  return crop_flip(x, config.crop_pad, dy, dx, flip);
}

namespace {

std::size_t channel_axis(const Shape& shape) {
  if (shape.size() == 3) return 0;
  if (shape.size() == 4) return 1;
  throw DimensionError("expected [C, H, W] or [F, C, H, W], got " + shape_string(shape));
}

void check_moments(std::size_t channels, std::span<const double> mean, std::span<const double> stddev) {
  if (mean.size() != channels || stddev.size() != channels)
    throw DimensionError("normalize: need one mean and std per channel");
  for (double s : stddev)
    if (!(s > 0.0)) throw ParameterError("normalize: standard deviation must be positive");
}

void normalize_in_place(std::span<double> v, const Shape& shape, std::span<const double> mean,
                        std::span<const double> stddev) {
  const std::size_t axis = channel_axis(shape);
  const std::size_t c = shape[axis];
  const std::size_t inner = shape[axis + 1] * shape[axis + 2];
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t ch = (i / inner) % c;
    v[i] = (v[i] - mean[ch]) / stddev[ch];
  }
}

}  // namespace

Tensor normalize(const Tensor& x, std::span<const double> mean, std::span<const double> stddev) {
  check_moments(x.dim(channel_axis(x.shape())), mean, stddev);
  Tensor out = x.clone();
  normalize_in_place(out.mutable_data(), x.shape(), mean, stddev);
  return out;
}

void normalize_dataset(Dataset& d, std::span<const double> mean, std::span<const double> stddev) {
  check_moments(d.sample_shape[channel_axis(d.sample_shape)], mean, stddev);
  const std::size_t n = d.sample_numel();
  for (std::size_t i = 0; i < d.size(); ++i)
    normalize_in_place(std::span<double>(d.values.data() + i * n, n), d.sample_shape, mean, stddev);
}

void channel_moments(const Dataset& d, std::vector<double>& mean, std::vector<double>& stddev) {
  if (d.size() == 0) throw ParameterError("channel_moments: empty dataset");
  const std::size_t axis = channel_axis(d.sample_shape);
  const std::size_t c = d.sample_shape[axis];
  const std::size_t inner = d.sample_shape[axis + 1] * d.sample_shape[axis + 2];
  std::vector<double> s(c, 0.0), count(c, 0.0);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const std::size_t ch = (i / inner) % c;
    s[ch] += d.values[i];
    count[ch] += 1.0;
  }
  mean.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) mean[ch] = s[ch] / count[ch];
  std::vector<double> sq(c, 0.0);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const std::size_t ch = (i / inner) % c;
    const double dv = d.values[i] - mean[ch];
    sq[ch] += dv * dv;
  }
  stddev.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) stddev[ch] = std::sqrt(sq[ch] / count[ch]);
}

Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.rank() < 2) throw DimensionError("resize_nearest needs at least two axes");
  if (height == 0 || width == 0) throw ParameterError("resize_nearest: target extents must be positive");
  const std::size_t h = x.dim(x.rank() - 2);
  const std::size_t w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  std::vector<double> out(planes * height * width);
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < height; ++i) {
      const std::size_t si = i * h / height;
      for (std::size_t j = 0; j < width; ++j)
        out[(p * height + i) * width + j] = in[(p * h + si) * w + j * w / width];
    }
  return Tensor(std::move(shape), std::move(out));
}

// ---- batching --------------------------------------------------------------------------------

Tensor make_batch(const Dataset& d, std::span<const std::size_t> indices, std::size_t steps,
                  const AugmentConfig& aug, std::mt19937_64* rng) {
  if (indices.empty()) throw ParameterError("make_batch: empty batch");
  if (steps < 1) throw ParameterError("make_batch: steps must be >= 1");
  const Shape frame = d.frame_shape();
  const std::size_t per = shape_numel(frame);
  const std::size_t b = indices.size();
  Shape shape{steps, b};
  shape.insert(shape.end(), frame.begin(), frame.end());
  std::vector<double> out(steps * b * per);
  for (std::size_t k = 0; k < b; ++k) {
    Tensor sample(d.sample_shape, std::vector<double>(d.sample(indices[k]).begin(), d.sample(indices[k]).end()));
    if (rng && (aug.crop_pad > 0 || aug.hflip_prob > 0.0)) sample = augment(sample, aug, *rng);
    const auto v = sample.data();
    for (std::size_t n = 0; n < steps; ++n) {
      const std::size_t src = d.frames == 0 ? 0 : (n % d.frames) * per;
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(src), per,
                  out.begin() + static_cast<std::ptrdiff_t>((n * b + k) * per));
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> batch_labels(const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= d.size()) throw InputError("sample index out of range");
    out.push_back(d.labels[i]);
  }
  return out;
}

}  // namespace dsr
