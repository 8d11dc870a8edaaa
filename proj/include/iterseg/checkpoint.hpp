#pragma once

// Binary model checkpoint, all integers and floats little-endian:
//   "ISEG" | u32 version | arch | u32 array count |
//   per array: u32 rank, u32 dims[rank], f64 values | u32 CRC-32
// arch = u32 patch, heatmap, categories, kernel, head width, block count,
//        then u32 channels, stride per block.
// The CRC covers every preceding byte.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/model.hpp"

namespace iterseg {

inline constexpr char kCheckpointMagic[4] = {'I', 'S', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
      bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b, std::size_t end)
      : bytes_(b), end_(end) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CorruptCheckpointError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 4;  // after the magic
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const SegNet& net) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const ArchDescriptor& a = net.arch();
  w.u32(static_cast<std::uint32_t>(a.patch_size));
  w.u32(static_cast<std::uint32_t>(a.heatmap_size));
  w.u32(static_cast<std::uint32_t>(a.num_categories));
  w.u32(static_cast<std::uint32_t>(a.kernel_size));
  w.u32(static_cast<std::uint32_t>(a.head_width));
  w.u32(static_cast<std::uint32_t>(a.blocks.size()));
  for (const auto& b : a.blocks) {
    w.u32(static_cast<std::uint32_t>(b.channels));
    w.u32(static_cast<std::uint32_t>(b.stride));
  }
  w.u32(static_cast<std::uint32_t>(2 * net.layers().size()));
  for (const auto& l : net.layers()) {
    const Dims& k = l.kernel.dims();
    w.u32(4);
    for (std::size_t d : {k.batch, k.channels, k.height, k.width})
      w.u32(static_cast<std::uint32_t>(d));
    for (double v : l.kernel.values()) w.f64(v);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(l.bias.size()));
    for (double v : l.bias) w.f64(v);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32_of(bytes.data(), bytes.size());
  w.u32(crc);
  return std::move(bytes);
}

inline SegNet deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CorruptCheckpointError("not an ISEG checkpoint");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
  if (crc32_of(bytes.data(), body) != stored)
    throw CorruptCheckpointError("checkpoint CRC mismatch");

  detail::ByteReader r(bytes, body);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CorruptCheckpointError("unsupported checkpoint version " + std::to_string(version));
  ArchDescriptor a;
  a.patch_size = r.u32();
  a.heatmap_size = r.u32();
  a.num_categories = r.u32();
  a.kernel_size = r.u32();
  a.head_width = r.u32();
  const std::uint32_t nblocks = r.u32();
  if (nblocks > 64) throw CorruptCheckpointError("implausible block count");
  a.blocks.clear();
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    BlockSpec s;
    s.channels = r.u32();
    s.stride = r.u32();
    a.blocks.push_back(s);
  }
  SegNet net;
  try {
    net = SegNet(a);
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(std::string("checkpoint architecture invalid: ") + e.what());
  }
  const std::uint32_t narrays = r.u32();
  if (narrays != 2 * net.layers().size())
    throw CorruptCheckpointError("checkpoint array count does not match architecture");
  for (auto& l : net.layers()) {
    for (int part = 0; part < 2; ++part) {
      const std::uint32_t rank = r.u32();
      std::vector<std::size_t> dims;
      for (std::uint32_t i = 0; i < rank && i < 8; ++i) dims.push_back(r.u32());
      std::span<double> target = part == 0 ? l.kernel.values() : std::span<double>(l.bias);
      const bool ok =
          part == 0 ? (rank == 4 && Dims{dims[0], dims[1], dims[2], dims[3]} == l.kernel.dims())
                    : (rank == 1 && dims[0] == l.bias.size());
      if (!ok) throw CorruptCheckpointError("checkpoint array shape does not match architecture");
      for (double& v : target) v = r.f64();
    }
  }
  if (!r.at_end()) throw CorruptCheckpointError("trailing bytes before checkpoint CRC");
  return net;
}

inline void save_checkpoint(const std::filesystem::path& path, const SegNet& net) {
  const auto bytes = serialize_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline SegNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace iterseg
