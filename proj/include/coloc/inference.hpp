#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/features.hpp"
#include "coloc/geometry.hpp"
#include "coloc/model.hpp"
#include "coloc/rng.hpp"
#include "coloc/tracks.hpp"

namespace coloc {

using CondSets = std::vector<std::vector<Doa>>;

/// Maps (features, one conditioning DOA set per label frame) to T rows of
/// either 3-vectors (localizer role) or (K+1)-simplexes (classifier role).
class FramePredictor {
 public:
  virtual ~FramePredictor() = default;
  virtual int outputs() const = 0;
  virtual Mat<double> predict(const FeatureTensor& features, const CondSets& cond) = 0;
};

/// Trained conditioned model.
class NetPredictor : public FramePredictor {
 public:
  explicit NetPredictor(ConditionedModel<float> model) : model_(std::move(model)) {}
  int outputs() const override { return model_.net.config().outputs; }
  Mat<double> predict(const FeatureTensor& features, const CondSets& cond) override {
    return model_.forward(features, cond).cast<double>();
  }
  const ConditionedModel<float>& model() const { return model_; }

 private:
  ConditionedModel<float> model_;
};

/// Adds isotropic Gaussian noise of std `sigma_deg` in the tangent plane and
/// renormalizes.
inline Doa cone_noise(const Doa& d, double sigma_deg, Rng& rng) {
  if (sigma_deg <= 0.0) return d;
  const Vec3 u = normalized(d);
  const Vec3 helper = std::abs(u.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  Vec3 e1 = helper - dot(helper, u) * u;
  e1 = normalized(e1);
  const Vec3 e2{u.y * e1.z - u.z * e1.y, u.z * e1.x - u.x * e1.z, u.x * e1.y - u.y * e1.x};
  std::normal_distribution<double> g(0.0, deg2rad(sigma_deg));
  const double a = g(rng), b = g(rng);
  return normalized(u + a * e1 + b * e2);
}

/// Ground-truth localizer: per frame, the first reference DOA (row order)
/// farther than `tolerance_deg` from every conditioning DOA, else the
/// origin. Optional cone noise on the emitted DOA.
class OracleLocalizer : public FramePredictor {
 public:
  explicit OracleLocalizer(StackedTracks truth, double sigma_deg = 0.0, std::uint64_t seed = 0,
                           double tolerance_deg = 7.5)
      : truth_(std::move(truth)), sigma_(sigma_deg), tol_(tolerance_deg), rng_(seed) {}
  int outputs() const override { return 3; }
  Mat<double> predict(const FeatureTensor& features, const CondSets& cond) override {
    check(features, cond);
    Mat<double> out = Mat<double>::Zero(Eigen::Index(cond.size()), 3);
    for (int t = 0; t < truth_.n_frames(); ++t) {
      for (int r = 0; r < truth_.n_tracks(); ++r) {
        const auto& cell = truth_.at(r, t);
        if (cell.empty()) continue;
        bool used = false;
        for (const auto& c : cond[std::size_t(t)]) used = used || angular_distance(c, cell.xyz) <= tol_;
        if (used) continue;
        const Doa d = cone_noise(cell.xyz, sigma_, rng_);
        out.row(t) << d.x, d.y, d.z;
        break;
      }
    }
    return out;
  }

 private:
  void check(const FeatureTensor& f, const CondSets& cond) const {
    if (int(cond.size()) != truth_.n_frames() || f.label_frames() != truth_.n_frames())
      throw Error("OracleLocalizer: frame count differs from the reference");
  }
  StackedTracks truth_;
  double sigma_, tol_;
  Rng rng_;
};

/// Ground-truth classifier: one-hot on the class of the reference event
/// nearest to the conditioning DOA (within tolerance), else class K.
class OracleClassifier : public FramePredictor {
 public:
  explicit OracleClassifier(StackedTracks truth, double tolerance_deg = 7.5)
      : truth_(std::move(truth)), tol_(tolerance_deg) {}
  int outputs() const override { return truth_.n_classes() + 1; }
  Mat<double> predict(const FeatureTensor& features, const CondSets& cond) override {
    if (int(cond.size()) != truth_.n_frames() || features.label_frames() != truth_.n_frames())
      throw Error("OracleClassifier: frame count differs from the reference");
    const int K = truth_.n_classes();
    Mat<double> out = Mat<double>::Zero(Eigen::Index(cond.size()), K + 1);
    for (int t = 0; t < truth_.n_frames(); ++t) {
      int cls = K;
      if (!cond[std::size_t(t)].empty()) {
        const Doa& q = cond[std::size_t(t)].front();
        double best = tol_;
        for (int r = 0; r < truth_.n_tracks(); ++r) {
          const auto& cell = truth_.at(r, t);
          if (cell.empty()) continue;
          const double a = angular_distance(q, cell.xyz);
          if (a <= best) {
            best = a;
            cls = cell.cls;
          }
        }
      }
      out(t, cls) = 1.0;
    }
    return out;
  }

 private:
  StackedTracks truth_;
  double tol_;
};

/// One-hot on a uniformly random class in [0, K] per frame.
class RandomClassifier : public FramePredictor {
 public:
  RandomClassifier(int n_classes, std::uint64_t seed) : k_(n_classes), rng_(seed) {}
  int outputs() const override { return k_ + 1; }
  Mat<double> predict(const FeatureTensor&, const CondSets& cond) override {
    Mat<double> out = Mat<double>::Zero(Eigen::Index(cond.size()), k_ + 1);
    for (Eigen::Index t = 0; t < out.rows(); ++t) out(t, uniform_int(rng_, 0, k_)) = 1.0;
    return out;
  }

 private:
  int k_;
  Rng rng_;
};

// ------------------------------------------------------------ SSG loop

struct SsgOptions {
  int n_tracks = 3;
  int n_classes = 13;
  int max_steps = 3;
  double threshold = 0.5;
  /// Uniform az/el perturbation (degrees) of conditioning DOAs; 0 disables.
  double perturb_deg = 0.0;
  std::uint64_t seed = 0;
};

namespace inference_detail {
inline Mat<double> checked_predict(FramePredictor& p, const FeatureTensor& f, const CondSets& cond, int outputs,
                                   const char* who) {
  Mat<double> y = p.predict(f, cond);
  if (y.rows() != Eigen::Index(cond.size()) || y.cols() != outputs)
    throw Error(std::string(who) + ": predictor returned " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                ", expected " + std::to_string(cond.size()) + "x" + std::to_string(outputs));
  return y;
}
}  // namespace inference_detail

/// Self-conditioned sequential localization. Step s conditions each frame on
/// the DOAs already found in rows 0..s-1 (origin when none) and writes the
/// normalized prediction into row s where its length exceeds the threshold;
/// a frame whose row s-1 is empty is finished. Stops early after a step that
/// detects nothing. Class cells stay K.
inline StackedTracks ssg_localize(FramePredictor& loc, const FeatureTensor& features, const SsgOptions& o) {
  if (o.max_steps < 1 || o.max_steps > o.n_tracks) throw Error("ssg_localize: max_steps must be in [1, n_tracks]");
  const int T = features.label_frames();
  StackedTracks st(o.n_tracks, T, o.n_classes);
  Rng rng = make_rng(o.seed, {0x55c});
  for (int s = 0; s < o.max_steps; ++s) {
    CondSets cond(std::size_t(T), std::vector<Doa>{});
    for (int t = 0; t < T; ++t) {
      cond[std::size_t(t)] = st.doas_below(t, s);
      if (o.perturb_deg > 0.0)
        for (auto& d : cond[std::size_t(t)]) d = perturb_doa(d, o.perturb_deg, rng);
    }
    const Mat<double> y = inference_detail::checked_predict(loc, features, cond, 3, "ssg_localize");
    bool any = false;
    for (int t = 0; t < T; ++t) {
      if (s > 0 && st.at(s - 1, t).empty()) continue;
      const Vec3 v{y(t, 0), y(t, 1), y(t, 2)};
      if (!is_finite(v)) throw Error("ssg_localize: non-finite prediction");
      if (norm2(v) > o.threshold) {
        st.at(s, t).xyz = normalized(v);
        st.at(s, t).cls = o.n_classes;  // filled by classify_tracks
        any = true;
      }
    }
    if (!any) break;
  }
  return st;
}

/// Classifies every non-empty row independently, conditioning each frame on
/// that row's DOA (origin where empty). A detected cell whose argmax is the
/// silence class is removed and its frame re-compacted.
inline StackedTracks classify_tracks(FramePredictor& cls, const FeatureTensor& features, const StackedTracks& doas,
                                     double perturb_deg = 0.0, std::uint64_t seed = 0) {
  const int K = doas.n_classes();
  const int T = doas.n_frames();
  if (features.label_frames() != T) throw Error("classify_tracks: features and tracks differ in frame count");
  StackedTracks out = doas;
  Rng rng = make_rng(seed, {0xc1a5});
  bool dropped = false;
  for (int r = 0; r < doas.n_tracks(); ++r) {
    bool any = false;
    CondSets cond(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto& cell = doas.at(r, t);
      if (cell.empty()) continue;
      any = true;
      cond[std::size_t(t)] = {perturb_deg > 0.0 ? perturb_doa(cell.xyz, perturb_deg, rng) : cell.xyz};
    }
    if (!any) continue;
    const Mat<double> p = inference_detail::checked_predict(cls, features, cond, K + 1, "classify_tracks");
    for (int t = 0; t < T; ++t) {
      if (doas.at(r, t).empty()) continue;
      Eigen::Index arg = 0;
      p.row(t).maxCoeff(&arg);
      if (int(arg) == K) {
        out.clear_cell(r, t);
        dropped = true;
      } else {
        out.at(r, t).cls = int(arg);
      }
    }
  }
  if (dropped) out.compact();
  return out;
}

// ------------------------------------------------------------ SELD output

struct Detection {
  int class_id = 0;
  Doa doa;
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Per label frame, the detected (class, DOA) pairs.
using SeldOutput = std::vector<std::vector<Detection>>;

inline SeldOutput to_seld_output(const StackedTracks& st) {
  SeldOutput out(std::size_t(st.n_frames()));
  for (int t = 0; t < st.n_frames(); ++t)
    for (int r = 0; r < st.n_tracks(); ++r) {
      const auto& c = st.at(r, t);
      if (c.cls == st.n_classes()) continue;
      if (c.empty())
        throw Error("to_seld_output: class " + std::to_string(c.cls) + " with zero DOA at row " + std::to_string(r) +
                    ", frame " + std::to_string(t));
      out[std::size_t(t)].push_back({c.cls, c.xyz});
    }
  return out;
}

/// Meta/prediction rows; track = position within the frame (the stacked row).
inline std::vector<FrameEvent> seld_to_events(const SeldOutput& out) {
  std::vector<FrameEvent> ev;
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t i = 0; i < out[t].size(); ++i) ev.push_back({int(t), int(i), out[t][i].class_id, out[t][i].doa});
  return ev;
}

inline SeldOutput events_to_seld(const std::vector<FrameEvent>& events, int n_frames) {
  SeldOutput out(static_cast<std::size_t>(n_frames));
  std::vector<FrameEvent> sorted = events;
  std::stable_sort(sorted.begin(), sorted.end(), [](const FrameEvent& a, const FrameEvent& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.track_id < b.track_id;
  });
  for (const auto& e : sorted) {
    if (e.frame < 0 || e.frame >= n_frames)
      throw Error("events_to_seld: frame " + std::to_string(e.frame) + " outside [0, " + std::to_string(n_frames) + ")");
    out[std::size_t(e.frame)].push_back({e.class_id, e.doa});
  }
  return out;
}

struct PipelineResult {
  StackedTracks localized;
  StackedTracks classified;
  SeldOutput output;
};

/// Features -> ssg_localize -> classify_tracks -> to_seld_output.
inline PipelineResult run_pipeline(FramePredictor& loc, FramePredictor& cls, const FeatureTensor& features,
                                   const SsgOptions& o) {
  PipelineResult r;
  r.localized = ssg_localize(loc, features, o);
  r.classified = classify_tracks(cls, features, r.localized, o.perturb_deg, o.seed);
  r.output = to_seld_output(r.classified);
  return r;
}

/// "max_ov2" / "max_ov3" -> 2 / 3.
inline int parse_mode(const std::string& mode) {
  if (mode == "max_ov2") return 2;
  if (mode == "max_ov3") return 3;
  throw Error("unknown inference mode '" + mode + "' (expected max_ov2 or max_ov3)");
}

}  // namespace coloc
