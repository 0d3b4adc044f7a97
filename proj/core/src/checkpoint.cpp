#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dsr/engine.hpp"
#include "dsr/errors.hpp"

namespace dsr {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kF64 = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) bytes_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void u64(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) bytes_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string path) : b_(std::move(bytes)), path_(std::move(path)) {}
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("'" + path_ + "': truncated checkpoint");
  }
  std::vector<std::uint8_t> b_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const std::string& name, const Shape& shape, std::span<const double> values) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.u8(kF64);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : values) w.f64(v);
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net) {
  Writer w;
  w.raw("DSR1");
  w.u32(kVersion);
  w.u64(spec_digest(net.spec()));
  w.u32(static_cast<std::uint32_t>(net.parameters().size() + net.buffers().size()));
  for (const auto& p : net.parameters()) write_record(w, p.name, p.value.shape(), p.value.data());
  for (const auto& b : net.buffers()) write_record(w, b.name, Shape{b.data->size()}, *b.data);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw InputError("write failed for checkpoint '" + path + "'");
}

void load_checkpoint(const std::string& path, Network& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path);
  if (r.str(4) != "DSR1") throw FormatError("'" + path + "': bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("'" + path + "': unsupported version " + std::to_string(version));
  const std::uint64_t digest = r.u64();
  if (digest != spec_digest(net.spec()))
    throw SpecError("'" + path + "' was written for a different network architecture");
  const std::uint32_t count = r.u32();
  if (count != net.parameters().size() + net.buffers().size())
    throw FormatError("'" + path + "': record count does not match the network");

  // Parse everything before touching the network so a bad file leaves it intact.
  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Record> records(count);
  for (auto& rec : records) {
    const std::uint32_t len = r.u32();
    if (len > 4096) throw FormatError("'" + path + "': implausible record name length");
    rec.name = r.str(len);
    if (r.u8() != kF64) throw FormatError("'" + path + "': record '" + rec.name + "' has unknown dtype");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("'" + path + "': record '" + rec.name + "' has rank " + std::to_string(rank));
    rec.shape.resize(rank);
    for (auto& d : rec.shape) d = r.u32();
    rec.values.resize(shape_numel(rec.shape));
    for (auto& v : rec.values) v = r.f64();
  }
  if (!r.done()) throw FormatError("'" + path + "': trailing bytes");

  std::size_t k = 0;
  for (auto& p : net.parameters()) {
    const auto& rec = records[k++];
    if (rec.name != p.name || rec.shape != p.value.shape())
      throw FormatError("'" + path + "': record '" + rec.name + "' does not match parameter '" + p.name + "'");
  }
  for (auto& b : net.buffers()) {
    const auto& rec = records[k++];
    if (rec.name != b.name || rec.values.size() != b.data->size())
      throw FormatError("'" + path + "': record '" + rec.name + "' does not match buffer '" + b.name + "'");
  }
  k = 0;
  for (auto& p : net.parameters()) {
    const auto& v = records[k++].values;
    std::copy(v.begin(), v.end(), p.value.mutable_data().begin());
  }
  for (auto& b : net.buffers()) *b.data = records[k++].values;
}

}  // namespace dsr
