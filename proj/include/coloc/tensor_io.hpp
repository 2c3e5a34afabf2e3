#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "coloc/error.hpp"

namespace coloc {

// Raw tensor file, little-endian:
//   16 bytes  magic "COLOCTEN" followed by 8 zero bytes
//   u32       rank
//   u32[rank] dims
//   f32[prod(dims)] row-major payload
//   u32       CRC-32 of everything above

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

inline constexpr std::array<char, 16> kTensorMagic = {'C', 'O', 'L', 'O', 'C', 'T', 'E', 'N', 0, 0, 0, 0, 0, 0, 0, 0};

struct RawTensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  friend bool operator==(const RawTensor&, const RawTensor&) = default;
};

inline std::vector<unsigned char> encode_tensor(std::span<const std::uint32_t> shape, std::span<const float> data) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != data.size()) throw Error("encode_tensor: shape does not match payload size");
  std::vector<unsigned char> buf;
  buf.reserve(16 + 4 + 4 * shape.size() + 4 * data.size() + 4);
  const auto put = [&buf](const void* p, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + bytes);
  };
  put(kTensorMagic.data(), kTensorMagic.size());
  const std::uint32_t rank = std::uint32_t(shape.size());
  put(&rank, 4);
  put(shape.data(), 4 * shape.size());
  put(data.data(), 4 * data.size());
  const std::uint32_t crc = std::uint32_t(::crc32(0L, buf.data(), uInt(buf.size())));
  put(&crc, 4);
  return buf;
}

inline RawTensor decode_tensor(const std::vector<unsigned char>& buf, const std::string& name) {
  const auto fail = [&](const std::string& why) { return Error("tensor file " + name + ": " + why); };
  if (buf.size() < 16 + 4 + 4) throw fail("truncated header");
  if (std::memcmp(buf.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) throw fail("bad magic");
  std::uint32_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const std::uint32_t crc = std::uint32_t(::crc32(0L, buf.data(), uInt(buf.size() - 4)));
  if (crc != stored) throw fail("checksum mismatch (corrupt file)");
  std::uint32_t rank = 0;
  std::memcpy(&rank, buf.data() + 16, 4);
  std::size_t off = 20;
  if (buf.size() < off + 4 * std::size_t(rank) + 4) throw fail("truncated shape");
  RawTensor t;
  t.shape.resize(rank);
  std::memcpy(t.shape.data(), buf.data() + off, 4 * std::size_t(rank));
  off += 4 * std::size_t(rank);
  const std::size_t n = t.numel();
  if (buf.size() != off + 4 * n + 4) throw fail("payload size does not match shape");
  t.data.resize(n);
  std::memcpy(t.data.data(), buf.data() + off, 4 * n);
  return t;
}

inline void write_tensor(const std::string& path, std::span<const std::uint32_t> shape, std::span<const float> data) {
  const auto buf = encode_tensor(shape, data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_tensor: cannot open " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw Error("write_tensor: write failed for " + path);
}

inline void write_tensor(const std::string& path, const RawTensor& t) { write_tensor(path, t.shape, t.data); }

inline RawTensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_tensor: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(buf, path);
}

}  // namespace coloc
