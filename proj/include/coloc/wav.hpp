#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "coloc/error.hpp"

namespace coloc {

/// Interleaving-free multichannel buffer as stored in / loaded from WAV.
struct WavData {
  int sample_rate = 0;
  std::vector<std::vector<float>> channels;
};

enum class WavFormat { Pcm16, Float32 };

namespace wav_detail {
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
}  // namespace wav_detail

inline void write_wav(const std::string& path, const WavData& w, WavFormat fmt = WavFormat::Float32) {
  using namespace wav_detail;
  if (w.channels.empty()) throw Error("write_wav: no channels");
  const std::size_t n = w.channels[0].size();
  for (const auto& c : w.channels)
    if (c.size() != n) throw Error("write_wav: channels differ in length");
  const std::uint16_t nch = std::uint16_t(w.channels.size());
  const std::uint16_t bytes = fmt == WavFormat::Pcm16 ? 2 : 4;
  const std::uint32_t data_bytes = std::uint32_t(n * nch * bytes);
  std::vector<unsigned char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, fmt == WavFormat::Pcm16 ? 1 : 3);
  put_u16(b, nch);
  put_u32(b, std::uint32_t(w.sample_rate));
  put_u32(b, std::uint32_t(w.sample_rate) * nch * bytes);
  put_u16(b, std::uint16_t(nch * bytes));
  put_u16(b, std::uint16_t(8 * bytes));
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& c : w.channels) {
      if (fmt == WavFormat::Pcm16) {
        const float v = std::clamp(c[i], -1.0f, 1.0f);
        put_u16(b, std::uint16_t(std::int16_t(std::lround(v * 32767.0f))));
      } else {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &c[i], 4);
        put_u32(b, bits);
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_wav: cannot open " + path);
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  if (!out) throw Error("write_wav: write failed for " + path);
}

inline WavData read_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_wav: cannot open " + path);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) { return Error("read_wav: " + path + ": " + why); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");
  std::uint16_t format = 0, nch = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  std::size_t off = 12;
  while (off + 8 <= b.size()) {
    const std::uint32_t len = get_u32(b.data() + off + 4);
    if (off + 8 + len > b.size()) throw fail("truncated chunk");
    if (std::memcmp(b.data() + off, "fmt ", 4) == 0) {
      if (len < 16) throw fail("short fmt chunk");
      format = get_u16(b.data() + off + 8);
      nch = get_u16(b.data() + off + 10);
      rate = get_u32(b.data() + off + 12);
      bits = get_u16(b.data() + off + 22);
    } else if (std::memcmp(b.data() + off, "data", 4) == 0) {
      data = b.data() + off + 8;
      data_len = len;
    }
    off += 8 + len + (len & 1);
  }
  if (nch == 0 || data == nullptr) throw fail("missing fmt or data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) throw fail("unsupported sample format (need 16-bit PCM or float32)");
  const std::size_t bytes = bits / 8;
  const std::size_t frames = data_len / (bytes * nch);
  WavData w;
  w.sample_rate = int(rate);
  w.channels.assign(nch, std::vector<float>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < nch; ++c) {
      const unsigned char* p = data + (i * nch + c) * bytes;
      if (pcm16) {
        w.channels[c][i] = float(std::int16_t(get_u16(p))) / 32767.0f;
      } else {
        const std::uint32_t u = get_u32(p);
        std::memcpy(&w.channels[c][i], &u, 4);
      }
    }
  }
  return w;
}

}  // namespace coloc
