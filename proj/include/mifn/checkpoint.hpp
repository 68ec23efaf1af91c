#pragma once

// Binary checkpoint format, version 1. All integers and floats little-endian.
//
//   offset  size        field
//   0       8           magic "MIFNCKPT"
//   8       4 (u32)     format version (1)
//   12      4 (u32)     parameter count P
//   then P records, sorted by name:
//           4 (u32)     name length L
//           L           name bytes
//           4 (u32)     rank R
//           8*R (u64)   extents
//           8*prod      values, row-major IEEE-754 binary64
//
// Nothing follows the last record.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "mifn/params.hpp"

namespace mifn {

static_assert(std::is_same_v<Real, double>, "checkpoints store binary64 values");

inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'I', 'F', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t x = 0;
    for (int i = 0; i < width; ++i)
      x |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return x;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ModelParams& params) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.count()));
  for (const auto& [name, t] : params.all()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) detail::put_u64(out, e);
    for (double v : t.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline ModelParams decode_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes);
  const std::string magic = in.raw(kCheckpointMagic.size());
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = in.uint(4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.uint(4);
  ModelParams params;
  for (std::uint64_t p = 0; p < count; ++p) {
    const std::string name = in.raw(in.uint(4));
    const auto rank = in.uint(4);
    if (rank > 8) throw CheckpointError("implausible rank for " + name);
    Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(in.uint(8));
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(in.uint(8));
    if (params.contains(name)) throw CheckpointError("duplicate parameter in checkpoint: " + name);
    params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last checkpoint record");
  return params;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  const std::string bytes = encode_checkpoint(params);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Throws CheckpointError unless `loaded` has exactly the names and shapes of `expected`.
inline void check_compatible(const ModelParams& expected, const ModelParams& loaded) {
  for (const auto& [name, t] : expected.all()) {
    if (!loaded.contains(name)) throw CheckpointError("checkpoint lacks parameter " + name);
    if (loaded.at(name).shape != t.shape)
      throw CheckpointError("dimension mismatch for " + name + ": checkpoint " + shape_str(loaded.at(name).shape) +
                            ", model " + shape_str(t.shape));
  }
  for (const auto& [name, _] : loaded.all())
    if (!expected.contains(name)) throw CheckpointError("checkpoint has unexpected parameter " + name);
}

}  // namespace mifn
