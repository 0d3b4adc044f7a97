#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dsr/data.hpp"
#include "dsr/errors.hpp"
#include "dsr/representation.hpp"

namespace fs = std::filesystem;

namespace dsr {
namespace {

class DataFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dsr_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static void truncate(const std::string& p, std::size_t drop) {
    fs::resize_file(p, fs::file_size(p) - drop);
  }
  static void write_bytes(const std::string& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }

  fs::path dir_;
};

TEST_F(DataFiles, IdxSinglePixelScalesToOne) {
  const std::uint8_t px[] = {255}, lb[] = {3};
  write_idx(path("i"), path("l"), px, 1, 1, lb);
  const Dataset d = load_idx(path("i"), path("l"));
  EXPECT_EQ(d.values, std::vector<double>{1.0});
  EXPECT_EQ(d.labels, std::vector<int>{3});
}

TEST_F(DataFiles, IdxRoundTripShapes) {
  std::vector<std::uint8_t> px(2 * 3 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 10);
  const std::uint8_t lb[] = {1, 0};
  write_idx(path("i"), path("l"), px, 3, 4, lb);
  const Dataset d = load_idx(path("i"), path("l"), Split::Test);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.sample_shape, (Shape{1, 3, 4}));
  EXPECT_EQ(d.split, Split::Test);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_DOUBLE_EQ(d.values[i], px[i] / 255.0);
  EXPECT_NO_THROW(d.validate());
}

TEST_F(DataFiles, IdxBigEndianHeaderBytes) {
  const std::uint8_t px[] = {7, 8}, lb[] = {1};
  write_idx(path("i"), path("l"), px, 1, 2, lb);
  std::ifstream in(path("i"), std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
  const std::vector<unsigned char> head{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 7, 8};
  EXPECT_EQ(b, head);
}

TEST_F(DataFiles, IdxCountMismatchIsFormatError) {
  const std::uint8_t px[] = {1, 2}, one[] = {0}, two[] = {0, 1};
  write_idx(path("i"), path("l"), px, 1, 2, one);
  write_idx(path("i2"), path("l2"), px, 1, 1, two);
  EXPECT_THROW(load_idx(path("i"), path("l2")), FormatError);
}

TEST_F(DataFiles, IdxRejectsBadMagicAndTruncation) {
  const std::uint8_t px[] = {1, 2, 3, 4}, lb[] = {0};
  write_idx(path("i"), path("l"), px, 2, 2, lb);
  EXPECT_THROW(load_idx(path("l"), path("l")), FormatError);  // label magic in the image slot
  truncate(path("i"), 1);
  EXPECT_THROW(load_idx(path("i"), path("l")), FormatError);
  write_bytes(path("short"), {0, 0});
  EXPECT_THROW(load_idx(path("short"), path("l")), FormatError);
  EXPECT_THROW(load_idx(path("missing"), path("l")), InputError);
}

TEST_F(DataFiles, CifarRoundTrip) {
  std::vector<std::uint8_t> px(2 * 3072);
  std::mt19937_64 rng(1);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng());
  const std::uint8_t lb[] = {7, 2};
  write_cifar_binary(path("c.bin"), lb, px);
  EXPECT_EQ(fs::file_size(path("c.bin")), 2u * 3073u);
  const Dataset d = load_cifar_binary(path("c.bin"));
  EXPECT_EQ(d.labels, (std::vector<int>{7, 2}));
  EXPECT_EQ(d.sample_shape, (Shape{3, 32, 32}));
  EXPECT_EQ(d.classes, 10u);
  for (std::size_t i = 0; i < px.size(); ++i) ASSERT_DOUBLE_EQ(d.values[i], px[i] / 255.0);
}

TEST_F(DataFiles, CifarZeroPixels) {
  const std::vector<std::uint8_t> px(3072, 0);
  const std::uint8_t lb[] = {7};
  write_cifar_binary(path("c.bin"), lb, px);
  const Dataset d = load_cifar_binary(path("c.bin"));
  EXPECT_EQ(d.labels, std::vector<int>{7});
  for (double v : d.values) EXPECT_EQ(v, 0.0);
}

TEST_F(DataFiles, CifarHundredKeepsFineLabel) {
  std::vector<std::uint8_t> bytes;
  for (std::uint8_t r = 0; r < 3; ++r) {
    bytes.push_back(r);            // coarse
    bytes.push_back(50 + r * 20);  // fine
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<std::uint8_t>(i + r));
  }
  write_bytes(path("c100.bin"), bytes);
  const Dataset d = load_cifar_binary(path("c100.bin"), Split::Train, 2);
  EXPECT_EQ(d.labels, (std::vector<int>{50, 70, 90}));
  EXPECT_EQ(d.classes, 91u);
  EXPECT_DOUBLE_EQ(d.values[3072 + 5], 6 / 255.0);
  EXPECT_THROW(load_cifar_binary(path("c100.bin")), FormatError);
  EXPECT_THROW(load_cifar_binary(path("c100.bin"), Split::Train, 3), ParameterError);
}

TEST_F(DataFiles, CifarBadLengthIsFormatError) {
  const std::vector<std::uint8_t> px(3072, 1);
  const std::uint8_t lb[] = {1};
  write_cifar_binary(path("c.bin"), lb, px);
  truncate(path("c.bin"), 5);
  EXPECT_THROW(load_cifar_binary(path("c.bin")), FormatError);
  write_bytes(path("empty.bin"), {});
  EXPECT_THROW(load_cifar_binary(path("empty.bin")), FormatError);
}

TEST_F(DataFiles, FramesRoundTrip) {
  Tensor f(Shape{20, 2, 3, 3});
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> u(0, 9);
  for (auto& v : f.mutable_data()) v = u(rng) * 0.5;  // exact in f32
  write_frames(path("a.snnf"), f);
  const FrameSequence s = load_frames(path("a.snnf"));
  EXPECT_EQ(s.frames.shape(), (Shape{20, 2, 3, 3}));
  EXPECT_EQ(s.count(), 20u);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(s.frames.at(i), f.at(i));
}

TEST_F(DataFiles, FramesZeroFile) {
  write_frames(path("z.snnf"), Tensor(Shape{1, 1, 2, 2}));
  const FrameSequence s = load_frames(path("z.snnf"));
  for (double v : s.frames.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(DataFiles, FramesRejectBadFiles) {
  write_frames(path("a.snnf"), Tensor(Shape{2, 1, 2, 2}, 1.0));
  truncate(path("a.snnf"), 2);
  EXPECT_THROW(load_frames(path("a.snnf")), FormatError);
  write_bytes(path("b.snnf"), {'S', 'N', 'N', 'X', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_THROW(load_frames(path("b.snnf")), FormatError);
  write_bytes(path("c.snnf"), {'S', 'N', 'N', 'F', 0, 0, 0, 0});
  EXPECT_THROW(load_frames(path("c.snnf")), FormatError);
  // One f32 NaN payload.
  write_bytes(path("d.snnf"), {'S', 'N', 'N', 'F', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0xc0, 0x7f});
  EXPECT_THROW(load_frames(path("d.snnf")), FormatError);
}

TEST_F(DataFiles, FrameManifest) {
  write_frames(path("a.snnf"), Tensor(Shape{3, 1, 2, 2}, 0.5));
  write_frames(path("b.snnf"), Tensor(Shape{3, 1, 2, 2}, 1.0));
  {
    std::ofstream m(path("train.txt"));
    m << "# frames\na.snnf 0\n\nb.snnf 4\n";
  }
  const Dataset d = load_frame_dataset(path("train.txt"));
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.frames, 3u);
  EXPECT_EQ(d.frame_shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 4}));
  EXPECT_EQ(d.classes, 5u);

  write_frames(path("c.snnf"), Tensor(Shape{3, 1, 3, 2}, 1.0));
  {
    std::ofstream m(path("bad.txt"));
    m << "a.snnf 0\nc.snnf 1\n";
  }
  EXPECT_THROW(load_frame_dataset(path("bad.txt")), FormatError);
  {
    std::ofstream m(path("nolabel.txt"));
    m << "a.snnf\n";
  }
  EXPECT_THROW(load_frame_dataset(path("nolabel.txt")), FormatError);
}

TEST(EncodeStatic, ReplicatesAlongTime) {
  const Tensor x(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor one = encode_static(x, 1);
  EXPECT_EQ(one.shape(), (Shape{1, 2, 2}));
  const Tensor five = encode_static(x, 5);
  EXPECT_EQ(five.shape(), (Shape{5, 2, 2}));
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(five.at(n * 4 + i), x.at(i));
  EXPECT_THROW(encode_static(x, 0), ParameterError);
}

TEST(EncodeStatic, RepresentationIdentity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(Shape{3, 1, 4, 4});
  for (auto& v : x.mutable_data()) v = u(rng);
  for (std::size_t n : {1, 4, 9}) {
    const Tensor f = encode_static(x, n);
    const auto r = rep_input(f.data(), n, NeuronModel::IF);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(r.o[i], x.at(i), 1e-15);
    const auto l = rep_input(f.data(), n, NeuronModel::LIF, std::exp(-0.05), 0.05);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(l.o[i], x.at(i) / 0.05, 1e-12);
  }
}

TEST(AlignFrames, CyclesAndTruncates) {
  const Tensor f(Shape{3, 1}, {1, 2, 3});
  const Tensor longer = align_frames(f, 7);
  EXPECT_EQ(std::vector<double>(longer.data().begin(), longer.data().end()),
            (std::vector<double>{1, 2, 3, 1, 2, 3, 1}));
  const Tensor shorter = align_frames(f, 2);
  EXPECT_EQ(std::vector<double>(shorter.data().begin(), shorter.data().end()), (std::vector<double>{1, 2}));
}

Tensor random_image(std::uint64_t seed, Shape shape = {3, 6, 5}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(std::move(shape));
  for (auto& v : x.mutable_data()) v = u(rng);
  return x;
}

TEST(Augment, DisabledIsIdentity) {
  const Tensor x = random_image(4);
  std::mt19937_64 rng(0);
  const Tensor y = augment(x, {}, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Augment, DoubleFlipIsIdentity) {
  const Tensor x = random_image(5);
  const Tensor y = crop_flip(crop_flip(x, 0, 0, 0, true), 0, 0, 0, true);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
  const Tensor once = crop_flip(x, 0, 0, 0, true);
  EXPECT_EQ(once.at(0), x.at(4));
}

TEST(Augment, CropShiftsWithZeroFill) {
  const Tensor x(Shape{1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = crop_flip(x, 1, 0, 0, false);  // window starts one pixel up-left
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 0, 1}));
  const Tensor centred = crop_flip(x, 1, 1, 1, false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(centred.at(i), x.at(i));
  EXPECT_THROW(crop_flip(x, 1, 3, 0, false), ParameterError);
}

TEST(Augment, ReproducibleUnderSeedAndShapePreserving) {
  const Tensor x = random_image(6);
  const AugmentConfig cfg{2, 0.5};
  std::mt19937_64 a(42), b(42);
  for (int k = 0; k < 10; ++k) {
    const Tensor ya = augment(x, cfg, a), yb = augment(x, cfg, b);
    EXPECT_EQ(ya.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_EQ(ya.at(i), yb.at(i));
  }
  std::mt19937_64 c(0);
  EXPECT_THROW(augment(x, {0, 1.5}, c), ParameterError);
}

TEST(Augment, FramesShareOneCrop) {
  const Tensor same = encode_static(random_image(7, {1, 4, 4}), 2);
  std::mt19937_64 rng(3);
  const Tensor y = augment(same, {1, 1.0}, rng);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y.at(i), y.at(16 + i));
}

TEST(Normalize, IdentityAndMeanImage) {
  const Tensor x = random_image(8, {2, 3, 3});
  const double zero[] = {0.0, 0.0}, one[] = {1.0, 1.0};
  const Tensor same = normalize(x, zero, one);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same.at(i), x.at(i));
  const double mean[] = {0.3, 0.7}, sd[] = {2.0, 0.5};
  Tensor flat(Shape{2, 3, 3});
  for (std::size_t i = 0; i < 18; ++i) flat.mutable_data()[i] = i < 9 ? 0.3 : 0.7;
  const Tensor centred = normalize(flat, mean, sd);
  for (double v : centred.data()) EXPECT_EQ(v, 0.0);
  const double bad[] = {1.0, 0.0};
  EXPECT_THROW(normalize(x, zero, bad), ParameterError);
}

TEST(Normalize, DatasetMomentsGiveZeroMean) {
  Dataset d;
  d.sample_shape = {2, 3, 3};
  d.classes = 2;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(4.0, 3.0);
  for (int s = 0; s < 25; ++s) {
    for (int i = 0; i < 18; ++i) d.values.push_back(i < 9 ? g(rng) : 0.5 * g(rng));
    d.labels.push_back(s % 2);
  }
  std::vector<double> mean, sd;
  channel_moments(d, mean, sd);
  normalize_dataset(d, mean, sd);
  std::vector<double> after_mean, after_sd;
  channel_moments(d, after_mean, after_sd);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_LT(std::abs(after_mean[c]), 1e-6);
    EXPECT_NEAR(after_sd[c], 1.0, 1e-9);
  }
}

TEST(Resize, NearestNeighbour) {
  const Tensor x(Shape{1, 2, 2}, {1, 2, 3, 4});
  const Tensor up = resize_nearest(x, 4, 4);
  EXPECT_EQ(up.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(up.at(0), 1.0);
  EXPECT_EQ(up.at(3), 2.0);
  EXPECT_EQ(up.at(15), 4.0);
  const Tensor down = resize_nearest(up, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(down.at(i), x.at(i));
}

TEST(MakeBatch, LayoutAndLabels) {
  Dataset d;
  d.sample_shape = {1, 1, 2};
  d.values = {1, 2, 3, 4, 5, 6};
  d.labels = {0, 1, 2};
  d.classes = 3;
  const std::size_t idx[] = {2, 0};
  const Tensor b = make_batch(d, idx, 3);
  EXPECT_EQ(b.shape(), (Shape{3, 2, 1, 1, 2}));
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_EQ(b.at(n * 4 + 0), 5.0);
    EXPECT_EQ(b.at(n * 4 + 3), 2.0);
  }
  EXPECT_EQ(batch_labels(d, idx), (std::vector<int>{2, 0}));
  const std::size_t bad[] = {3};
  EXPECT_THROW(batch_labels(d, bad), InputError);
}

TEST(MakeBatch, FrameSamplesCycle) {
  Dataset d;
  d.sample_shape = {2, 1, 1, 1};
  d.frames = 2;
  d.values = {1, 2};
  d.labels = {0};
  d.classes = 1;
  const std::size_t idx[] = {0};
  const Tensor b = make_batch(d, idx, 5);
  EXPECT_EQ(b.shape(), (Shape{5, 1, 1, 1, 1}));
  EXPECT_EQ(std::vector<double>(b.data().begin(), b.data().end()), (std::vector<double>{1, 2, 1, 2, 1}));
}

TEST(Dataset, ValidateCatchesBadLabels) {
  Dataset d;
  d.sample_shape = {1};
  d.values = {0.0, 1.0};
  d.labels = {0, 2};
  d.classes = 2;
  EXPECT_THROW(d.validate(), InputError);
  d.labels = {0};
  EXPECT_THROW(d.validate(), FormatError);
}

}  // namespace
}  // namespace dsr
