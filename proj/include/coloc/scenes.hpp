#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/foa.hpp"
#include "coloc/geometry.hpp"
#include "coloc/rng.hpp"
#include "coloc/tracks.hpp"

namespace coloc {

struct SceneConfig {
  double duration_s = 5.0;
  int sample_rate = kSampleRate;
  int n_classes = 13;
  int max_overlap = 3;
  int min_events = 2;
  int max_events = 5;
  double min_event_s = 0.5;
  double max_event_s = 2.0;
  /// Source-to-noise ratio of the diffuse floor; +inf disables noise.
  double snr_db = 30.0;
  double max_speed_deg_s = 10.0;
  double min_separation_deg = 15.0;
  bool enforce_separation = true;
  double min_gain_db = -6.0;
  double max_gain_db = 0.0;
  int max_retries = 500;

  int n_frames() const { return int(std::lround(duration_s * sample_rate / kLabelHopSamples)); }

  void validate() const {
    if (sample_rate != kSampleRate) throw Error("SceneConfig: sample_rate must be 24000");
    if (duration_s <= 0.0) throw Error("SceneConfig: duration_s must be positive");
    if (n_frames() * kLabelHopSamples != int(std::lround(duration_s * sample_rate)))
      throw Error("SceneConfig: duration must be a whole number of 100 ms label frames");
    if (n_classes < 1) throw Error("SceneConfig: need at least one class");
    if (max_overlap < 1) throw Error("SceneConfig: max_overlap must be >= 1");
    if (min_events < 0 || max_events < min_events) throw Error("SceneConfig: bad events-per-scene range");
    if (min_event_s <= 0.0 || max_event_s < min_event_s) throw Error("SceneConfig: bad event duration range");
    if (max_speed_deg_s < 0.0) throw Error("SceneConfig: max_speed_deg_s must be >= 0");
    if (max_gain_db < min_gain_db) throw Error("SceneConfig: bad gain range");
  }
};

inline constexpr double kNominalSourceRms = 0.1;

struct SourceSignal {
  int class_id = 0;
  std::vector<float> waveform;
};

/// Fundamental of the harmonic stack that identifies a class.
inline double class_fundamental_hz(int class_id) { return 180.0 * std::pow(1.35, class_id); }

/// Class-specific synthetic timbre: a harmonic stack on class_fundamental_hz
/// plus band noise in the octave [2 f0, 4 f0], under an attack/decay envelope,
/// normalized to kNominalSourceRms (peak never above 1).
inline SourceSignal synth_class_signal(int class_id, std::size_t n_samples, Rng& rng, int sample_rate = kSampleRate) {
  if (class_id < 0) throw Error("synth_class_signal: negative class id");
  SourceSignal out{class_id, std::vector<float>(n_samples, 0.0f)};
  if (n_samples == 0) return out;

  const double fs = sample_rate;
  const double nyq_limit = 0.45 * fs;
  const double f0 = class_fundamental_hz(class_id);
  std::vector<double> x(n_samples, 0.0);

  struct Partial {
    double freq, amp, phase;
  };
  std::vector<Partial> partials;
  for (int h = 1; h <= 8 && h * f0 < nyq_limit; ++h)
    partials.push_back({h * f0, 1.0 / h, uniform(rng, 0.0, 2.0 * kPi)});
  const double band_lo = 2.0 * f0;
  const double band_hi = std::min(4.0 * f0, nyq_limit);
  if (band_lo < band_hi) {
    constexpr int kNoisePartials = 48;
    const double amp = std::sqrt(0.6 / kNoisePartials);
    for (int i = 0; i < kNoisePartials; ++i)
      partials.push_back({uniform(rng, band_lo, band_hi), amp, uniform(rng, 0.0, 2.0 * kPi)});
  }
  // A class whose fundamental exceeds the band still gets a tone.
  if (partials.empty()) partials.push_back({std::min(f0, nyq_limit), 1.0, uniform(rng, 0.0, 2.0 * kPi)});

  for (const auto& p : partials) {
    const double w = 2.0 * kPi * p.freq / fs;
    // rotate a phasor instead of calling sin per sample
    double c = std::cos(p.phase), s = std::sin(p.phase);
    const double cw = std::cos(w), sw = std::sin(w);
    for (std::size_t i = 0; i < n_samples; ++i) {
      x[i] += p.amp * s;
      const double nc = c * cw - s * sw;
      s = s * cw + c * sw;
      c = nc;
    }
  }

  const double attack = 0.02 * fs;
  const double release = 0.02 * fs;
  const double decay_tau = 0.8 * fs;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = double(i);
    const double env = std::min(1.0, (t + 1.0) / attack) * std::min(1.0, double(n_samples - i) / release) *
                       (0.6 + 0.4 * std::exp(-t / decay_tau));
    x[i] *= env;
  }

  double energy = 0.0, peak = 0.0;
  for (double v : x) {
    energy += v * v;
    peak = std::max(peak, std::abs(v));
  }
  const double rms = std::sqrt(energy / double(n_samples));
  double scale = rms > 0.0 ? kNominalSourceRms / rms : 0.0;
  if (peak * scale > 1.0) scale = 1.0 / peak;
  for (std::size_t i = 0; i < n_samples; ++i) out.waveform[i] = float(x[i] * scale);
  return out;
}

/// SN3D first-order encoding: W = s, X = s cos(el) cos(az), Y = s cos(el) sin(az), Z = s sin(el).
inline FoaAudio encode_foa(const SourceSignal& signal, const std::vector<AzEl>& trajectory, int sample_rate = kSampleRate) {
  const std::size_t n = signal.waveform.size();
  if (trajectory.size() != n) throw Error("encode_foa: trajectory length differs from signal length");
  FoaAudio out(n, sample_rate);
  for (std::size_t i = 0; i < n; ++i) {
    const Doa g = azel_to_doa(trajectory[i]);
    const float s = signal.waveform[i];
    out.ch[0][i] = s;
    out.ch[1][i] = float(s * g.x);
    out.ch[2][i] = float(s * g.y);
    out.ch[3][i] = float(s * g.z);
  }
  return out;
}

/// Adds `src` into `dst` starting at sample `offset`.
inline void mix_into(FoaAudio& dst, const FoaAudio& src, std::size_t offset) {
  if (offset + src.size() > dst.size()) throw Error("mix_into: source does not fit");
  for (int c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < src.size(); ++i) dst.ch[std::size_t(c)][offset + i] += src.ch[std::size_t(c)][i];
}

struct Scene {
  FoaAudio audio;
  std::vector<FrameEvent> events;
  int n_frames = 0;
};

namespace scene_detail {
struct Placement {
  int class_id;
  int onset;   // label frame
  int frames;  // duration in label frames
  double az0, el, speed;
  AzEl at_time(double t_since_onset) const { return {wrap_azimuth(az0 + speed * t_since_onset), el}; }
  AzEl at_frame(int frame) const { return at_time((frame - onset + 0.5) * 0.1); }
};
}  // namespace scene_detail

/// Random scene with frame-aligned events, at most cfg.max_overlap
/// simultaneous sources, and (optionally) >= min_separation_deg between
/// simultaneous sources at every frame. Track ids follow onset order.
inline Scene generate_scene(const SceneConfig& cfg, Rng& rng) {
  using scene_detail::Placement;
  cfg.validate();
  const int n_frames = cfg.n_frames();
  const std::size_t n_samples = std::size_t(n_frames) * kLabelHopSamples;
  const int n_events = uniform_int(rng, cfg.min_events, cfg.max_events);
  const int min_len = std::max(1, int(std::lround(cfg.min_event_s * 10.0)));
  const int max_len = std::max(min_len, int(std::lround(cfg.max_event_s * 10.0)));
  if (n_events > 0 && min_len > n_frames) throw Error("generate_scene: events longer than the scene");

  std::vector<Placement> placed;
  std::vector<int> load(std::size_t(n_frames), 0);
  for (int e = 0; e < n_events; ++e) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      Placement p{};
      p.class_id = uniform_int(rng, 0, cfg.n_classes - 1);
      p.frames = std::min(uniform_int(rng, min_len, max_len), n_frames);
      p.onset = uniform_int(rng, 0, n_frames - p.frames);
      p.az0 = uniform(rng, -180.0, 180.0);
      p.el = rad2deg(std::asin(uniform(rng, -1.0, 1.0)));
      p.speed = cfg.max_speed_deg_s > 0.0 ? uniform(rng, -cfg.max_speed_deg_s, cfg.max_speed_deg_s) : 0.0;
      ok = true;
      for (int f = p.onset; f < p.onset + p.frames && ok; ++f) ok = load[std::size_t(f)] < cfg.max_overlap;
      if (ok && cfg.enforce_separation) {
        for (const auto& q : placed) {
          const int lo = std::max(p.onset, q.onset);
          const int hi = std::min(p.onset + p.frames, q.onset + q.frames);
          for (int f = lo; f < hi && ok; ++f)
            ok = angular_distance(azel_to_doa(p.at_frame(f)), azel_to_doa(q.at_frame(f))) >= cfg.min_separation_deg;
          if (!ok) break;
        }
      }
      if (ok) {
        for (int f = p.onset; f < p.onset + p.frames; ++f) ++load[std::size_t(f)];
        placed.push_back(p);
      }
    }
    if (!ok)
      throw Error("generate_scene: cannot place event " + std::to_string(e) + " after " +
                  std::to_string(cfg.max_retries) + " attempts (constraints infeasible?)");
  }
  std::stable_sort(placed.begin(), placed.end(), [](const Placement& a, const Placement& b) { return a.onset < b.onset; });

  Scene scene;
  scene.n_frames = n_frames;
  scene.audio = FoaAudio(n_samples, cfg.sample_rate);
  for (std::size_t id = 0; id < placed.size(); ++id) {
    const Placement& p = placed[id];
    const std::size_t len = std::size_t(p.frames) * kLabelHopSamples;
    SourceSignal sig = synth_class_signal(p.class_id, len, rng, cfg.sample_rate);
    const double gain = std::pow(10.0, uniform(rng, cfg.min_gain_db, cfg.max_gain_db) / 20.0);
    for (auto& v : sig.waveform) v = float(v * gain);
    std::vector<AzEl> traj(len);
    for (std::size_t i = 0; i < len; ++i) traj[i] = p.at_time(double(i) / cfg.sample_rate);
    mix_into(scene.audio, encode_foa(sig, traj, cfg.sample_rate), std::size_t(p.onset) * kLabelHopSamples);
    for (int f = p.onset; f < p.onset + p.frames; ++f)
      scene.events.push_back({f, int(id), p.class_id, azel_to_doa(p.at_frame(f))});
  }
  std::stable_sort(scene.events.begin(), scene.events.end(), [](const FrameEvent& a, const FrameEvent& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.track_id < b.track_id;
  });

  if (std::isfinite(cfg.snr_db)) {
    Rng noise_rng(rng());
    std::normal_distribution<double> gauss(0.0, kNominalSourceRms * std::pow(10.0, -cfg.snr_db / 20.0));
    for (auto& c : scene.audio.ch)
      for (auto& v : c) v = float(v + gauss(noise_rng));
  }
  return scene;
}

}  // namespace coloc
