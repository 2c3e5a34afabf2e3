#pragma once

#include <array>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/geometry.hpp"
#include "coloc/wav.hpp"

namespace coloc {

inline constexpr int kSampleRate = 24000;
inline constexpr int kLabelHopSamples = 2400;  // 100 ms label frames

/// First-order ambisonics audio, SN3D, internal channel order (W, X, Y, Z).
struct FoaAudio {
  int sample_rate = kSampleRate;
  std::array<std::vector<float>, 4> ch;

  FoaAudio() = default;
  explicit FoaAudio(std::size_t n, int rate = kSampleRate) : sample_rate(rate) {
    for (auto& c : ch) c.assign(n, 0.0f);
  }

  std::size_t size() const { return ch[0].size(); }

  FoaAudio slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw Error("FoaAudio::slice: range out of bounds");
    FoaAudio out;
    out.sample_rate = sample_rate;
    for (int c = 0; c < 4; ++c)
      out.ch[std::size_t(c)].assign(ch[std::size_t(c)].begin() + std::ptrdiff_t(begin),
                                    ch[std::size_t(c)].begin() + std::ptrdiff_t(end));
    return out;
  }

  friend bool operator==(const FoaAudio&, const FoaAudio&) = default;
};

/// Applies a signed channel permutation in place.
inline void apply_channel_transform(FoaAudio& a, const FoaTransform& t) {
  if (t.is_identity()) return;
  const auto m = t.channel_matrix();
  const std::array<std::vector<float>, 4> src = a.ch;
  for (int i = 0; i < 4; ++i) {
    int col = -1;
    for (int j = 0; j < 4; ++j)
      if (m[i][j] != 0) col = j;
    const float sign = float(m[i][col]);
    auto& dst = a.ch[std::size_t(i)];
    const auto& s = src[std::size_t(col)];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = sign * s[k];
  }
}

// File order is ACN [W, Y, Z, X]; internal order is [W, X, Y, Z].
inline WavData to_wav_acn(const FoaAudio& a) {
  WavData w;
  w.sample_rate = a.sample_rate;
  w.channels = {a.ch[0], a.ch[2], a.ch[3], a.ch[1]};
  return w;
}

inline FoaAudio from_wav_acn(const WavData& w) {
  if (w.channels.size() != 4) throw Error("from_wav_acn: expected 4 channels, got " + std::to_string(w.channels.size()));
  FoaAudio a;
  a.sample_rate = w.sample_rate;
  a.ch = {w.channels[0], w.channels[3], w.channels[1], w.channels[2]};
  return a;
}

}  // namespace coloc
