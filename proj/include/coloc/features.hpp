#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/foa.hpp"
#include "coloc/geometry.hpp"
#include "coloc/rng.hpp"
#include "coloc/tensor_io.hpp"
#include "coloc/tracks.hpp"

namespace coloc {

inline constexpr int kWindow = 960;
inline constexpr int kHop = 480;
inline constexpr int kNfft = 1024;
inline constexpr int kFreqBins = kNfft / 2 + 1;  // 513
inline constexpr int kFeatureChannels = 11;
inline constexpr int kFramesPerLabel = kLabelHopSamples / kHop;  // 5
inline constexpr double kFeatureEps = 1e-8;

/// t x 513 complex STFT.
struct Spectrogram {
  int frames = 0;
  std::vector<std::complex<double>> bins;
  const std::complex<double>& at(int t, int f) const { return bins[std::size_t(t) * kFreqBins + std::size_t(f)]; }
  std::complex<double>& at(int t, int f) { return bins[std::size_t(t) * kFreqBins + std::size_t(f)]; }
};

/// Number of STFT frames for a signal: frames start every hop while the
/// start lies inside the signal; the tail of the last window is zero-padded.
inline int stft_frames(std::size_t n_samples) {
  if (n_samples < std::size_t(kWindow)) throw Error("stft: signal shorter than one window (960 samples)");
  return int((n_samples + kHop - 1) / kHop);
}

namespace features_detail {

struct FftwBuffers {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  FftwBuffers() {
    in = fftw_alloc_real(kNfft);
    out = fftw_alloc_complex(kFreqBins);
    if (!in || !out) throw Error("stft: FFTW allocation failed");
  }
  ~FftwBuffers() {
    fftw_free(in);
    fftw_free(out);
  }
  FftwBuffers(const FftwBuffers&) = delete;
  FftwBuffers& operator=(const FftwBuffers&) = delete;
};

// The FFTW planner is not thread-safe; plans are created once, executed
// concurrently through the new-array interface.
inline fftw_plan forward_plan() {
  static std::once_flag once;
  static fftw_plan plan = nullptr;
  std::call_once(once, [] {
    FftwBuffers tmp;
    plan = fftw_plan_dft_r2c_1d(kNfft, tmp.in, tmp.out, FFTW_ESTIMATE);
  });
  return plan;
}

inline const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindow);
    for (int n = 0; n < kWindow; ++n) v[std::size_t(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / kWindow);
    return v;
  }();
  return w;
}

}  // namespace features_detail

/// Periodic Hann window of 960 samples, hop 480, zero-padded to a 1024-point FFT.
inline Spectrogram stft(std::span<const float> x) {
  const int frames = stft_frames(x.size());
  const auto& win = features_detail::hann_window();
  const fftw_plan plan = features_detail::forward_plan();
  features_detail::FftwBuffers buf;
  Spectrogram s;
  s.frames = frames;
  s.bins.resize(std::size_t(frames) * kFreqBins);
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = std::size_t(t) * kHop;
    for (int n = 0; n < kNfft; ++n) {
      const std::size_t idx = start + std::size_t(n);
      buf.in[n] = (n < kWindow && idx < x.size()) ? win[std::size_t(n)] * double(x[idx]) : 0.0;
    }
    fftw_execute_dft_r2c(plan, buf.in, buf.out);
    for (int f = 0; f < kFreqBins; ++f) s.at(t, f) = {buf.out[f][0], buf.out[f][1]};
  }
  return s;
}

/// 11 x t x 513 feature stack: log-power (W, X, Y, Z), phase (W, X, Y, Z),
/// per-bin normalized active intensity (X, Y, Z).
struct FeatureTensor {
  int channels = kFeatureChannels;
  int frames = 0;
  int bins = kFreqBins;
  std::vector<float> data;

  FeatureTensor() = default;
  FeatureTensor(int c, int t, int f) : channels(c), frames(t), bins(f), data(std::size_t(c) * t * f, 0.0f) {}

  float at(int c, int t, int f) const { return data[(std::size_t(c) * frames + std::size_t(t)) * bins + std::size_t(f)]; }
  float& at(int c, int t, int f) { return data[(std::size_t(c) * frames + std::size_t(t)) * bins + std::size_t(f)]; }

  /// Label frames covered (frames / 5).
  int label_frames() const { return frames / kFramesPerLabel; }

  RawTensor to_raw() const {
    return {{std::uint32_t(channels), std::uint32_t(frames), std::uint32_t(bins)}, data};
  }
  static FeatureTensor from_raw(RawTensor raw) {
    if (raw.shape.size() != 3) throw Error("FeatureTensor: expected a rank-3 tensor");
    FeatureTensor f;
    f.channels = int(raw.shape[0]);
    f.frames = int(raw.shape[1]);
    f.bins = int(raw.shape[2]);
    f.data = std::move(raw.data);
    return f;
  }
  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;
};

inline FeatureTensor assemble_features(const FoaAudio& foa) {
  const std::size_t n = foa.size();
  for (const auto& c : foa.ch)
    if (c.size() != n) throw Error("assemble_features: FOA channels differ in length");
  std::array<Spectrogram, 4> spec;
  for (int c = 0; c < 4; ++c) spec[std::size_t(c)] = stft(foa.ch[std::size_t(c)]);
  const int frames = spec[0].frames;
  FeatureTensor out(kFeatureChannels, frames, kFreqBins);
  for (int t = 0; t < frames; ++t) {
    for (int f = 0; f < kFreqBins; ++f) {
      std::array<std::complex<double>, 4> s;
      for (int c = 0; c < 4; ++c) s[std::size_t(c)] = spec[std::size_t(c)].at(t, f);
      for (int c = 0; c < 4; ++c) {
        out.at(c, t, f) = float(std::log(std::norm(s[std::size_t(c)]) + kFeatureEps));
        out.at(4 + c, t, f) = float(std::arg(s[std::size_t(c)]));
      }
      Vec3 intensity;
      for (int d = 0; d < 3; ++d) intensity[d] = (std::conj(s[0]) * s[std::size_t(d + 1)]).real();
      const double norm = norm2(intensity) + kFeatureEps;
      for (int d = 0; d < 3; ++d) out.at(8 + d, t, f) = float(intensity[d] / norm);
    }
  }
  return out;
}

/// Input of a FeatureTensor expressed as a raw-tensor file.
inline FeatureTensor read_features(const std::string& path) { return FeatureTensor::from_raw(read_tensor(path)); }
inline void write_features(const std::string& path, const FeatureTensor& f) { write_tensor(path, f.to_raw()); }

inline void apply_gain(FoaAudio& foa, double gain) {
  for (auto& c : foa.ch)
    for (auto& v : c) v = float(v * gain);
}

/// Multiplies all channels by one gain drawn from U[0.5, 1.5]; returns the gain.
inline double volume_perturb(FoaAudio& foa, Rng& rng) {
  const double g = uniform(rng, 0.5, 1.5);
  apply_gain(foa, g);
  return g;
}

/// Applies the FOA channel transform to the audio and the matching label
/// transform to every event DOA.
inline void spatial_augment(FoaAudio& foa, std::vector<FrameEvent>& events, const FoaTransform& kind) {
  apply_channel_transform(foa, kind);
  for (auto& e : events) e.doa = kind.apply(e.doa);
}

/// Uniformly random kind among the 16; returns the kind applied.
inline FoaTransform spatial_augment(FoaAudio& foa, std::vector<FrameEvent>& events, Rng& rng) {
  const FoaTransform kind = FoaTransform::from_index(uniform_int(rng, 0, FoaTransform::kCount - 1));
  spatial_augment(foa, events, kind);
  return kind;
}

/// Feature frames [t0, t1) of a tensor.
inline FeatureTensor slice_frames(const FeatureTensor& f, int t0, int t1) {
  if (t0 < 0 || t1 < t0 || t1 > f.frames) throw Error("slice_frames: range out of bounds");
  FeatureTensor out(f.channels, t1 - t0, f.bins);
  for (int c = 0; c < f.channels; ++c) {
    const auto src = f.data.begin() + std::ptrdiff_t((std::size_t(c) * f.frames + std::size_t(t0)) * f.bins);
    std::copy(src, src + std::ptrdiff_t(std::size_t(t1 - t0) * f.bins),
              out.data.begin() + std::ptrdiff_t(std::size_t(c) * out.frames * out.bins));
  }
  return out;
}

/// Feature-domain counterpart of apply_gain followed by the channel
/// transform: log-powers shift by 2 ln(gain) and follow the permutation,
/// phases follow it and turn by pi on a sign flip, normalized intensities
/// follow it with the sign. Agrees with recomputing the features up to the
/// 1e-8 guards.
inline void augment_features(FeatureTensor& f, double gain, const FoaTransform& kind) {
  if (f.channels != kFeatureChannels) throw Error("augment_features: expected 11 channels");
  if (!(gain > 0.0)) throw Error("augment_features: gain must be positive");
  const std::size_t plane = std::size_t(f.frames) * f.bins;
  const float shift = float(2.0 * std::log(gain));
  const auto m = kind.channel_matrix();
  const std::vector<float> src = f.data;
  auto in = [&](int c) { return src.begin() + std::ptrdiff_t(std::size_t(c) * plane); };
  auto out = [&](int c) { return f.data.begin() + std::ptrdiff_t(std::size_t(c) * plane); };
  for (int i = 0; i < 4; ++i) {
    int col = 0;
    for (int j = 0; j < 4; ++j)
      if (m[i][j] != 0) col = j;
    const bool neg = m[i][col] < 0;
    std::transform(in(col), in(col) + std::ptrdiff_t(plane), out(i), [&](float v) { return v + shift; });
    std::transform(in(4 + col), in(4 + col) + std::ptrdiff_t(plane), out(4 + i), [&](float v) {
      if (!neg) return v;
      return v > 0.0f ? v - float(kPi) : v + float(kPi);
    });
    if (i > 0)
      std::transform(in(7 + col), in(7 + col) + std::ptrdiff_t(plane), out(7 + i),
                     [&](float v) { return neg ? -v : v; });
  }
}

/// Energy-weighted intensity direction of one feature frame range, from the
/// per-bin normalized intensity channels weighted by W power.
inline Vec3 intensity_direction(const FeatureTensor& feat, int t_begin, int t_end) {
  Vec3 acc;
  for (int t = t_begin; t < t_end; ++t)
    for (int f = 0; f < feat.bins; ++f) {
      const double w = std::exp(double(feat.at(0, t, f)));
      for (int d = 0; d < 3; ++d) acc[d] += w * feat.at(8 + d, t, f);
    }
  return acc;
}

}  // namespace coloc
