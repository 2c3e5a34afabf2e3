#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "coloc/assignment.hpp"
#include "coloc/error.hpp"
#include "coloc/inference.hpp"

namespace coloc {

// ------------------------------------------------------------ SELD scores

struct SeldOptions {
  int segment_frames = 10;
  double threshold_deg = 20.0;
};

/// Additive counts; merge across scenes in any order.
struct SeldCounts {
  long tp = 0, fp = 0, fn = 0;
  long substitutions = 0, deletions = 0, insertions = 0;
  long n_ref = 0;
  long matched = 0;  // class-matched pairs
  double matched_deg = 0.0;

  SeldCounts& operator+=(const SeldCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    n_ref += o.n_ref;
    matched += o.matched;
    matched_deg += o.matched_deg;
    return *this;
  }
};

struct SeldScores {
  double er20 = 0.0;
  double f20 = 1.0;
  double le_cd = std::numeric_limits<double>::quiet_NaN();
  double lr_cd = 1.0;
};

/// Counts for one aligned pred/ref pair. Within each frame and class,
/// predictions and references are paired by minimum total angle; pairs
/// within the threshold are true positives, the rest of both sides are
/// FP / FN. S, D, I come from the per-segment FP and FN totals.
inline SeldCounts seld_counts(const SeldOutput& pred, const SeldOutput& ref, const SeldOptions& o = {}) {
  if (pred.size() != ref.size())
    throw Error("seld_scores: prediction covers " + std::to_string(pred.size()) + " frames, reference " +
                std::to_string(ref.size()));
  if (o.segment_frames < 1) throw Error("seld_scores: segment_frames must be positive");
  SeldCounts total;
  for (std::size_t s0 = 0; s0 < ref.size(); s0 += std::size_t(o.segment_frames)) {
    const std::size_t s1 = std::min(ref.size(), s0 + std::size_t(o.segment_frames));
    long seg_fp = 0, seg_fn = 0;
    for (std::size_t t = s0; t < s1; ++t) {
      std::map<int, std::pair<std::vector<Doa>, std::vector<Doa>>> by_class;
      for (const auto& d : pred[t]) by_class[d.class_id].first.push_back(d.doa);
      for (const auto& d : ref[t]) by_class[d.class_id].second.push_back(d.doa);
      for (const auto& [cls, pr] : by_class) {
        const auto& [p, r] = pr;
        total.n_ref += long(r.size());
        if (p.empty() || r.empty()) {
          seg_fp += long(p.size());
          seg_fn += long(r.size());
          continue;
        }
        std::vector<double> cost(p.size() * r.size());
        for (std::size_t i = 0; i < p.size(); ++i)
          for (std::size_t j = 0; j < r.size(); ++j) cost[i * r.size() + j] = angular_distance(p[i], r[j]);
        const auto assign = hungarian(cost, int(p.size()), int(r.size()));
        long tp = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (assign[i] < 0) continue;
          const double a = cost[i * r.size() + std::size_t(assign[i])];
          ++total.matched;
          total.matched_deg += a;
          if (a <= o.threshold_deg) ++tp;
        }
        total.tp += tp;
        seg_fp += long(p.size()) - tp;
        seg_fn += long(r.size()) - tp;
      }
    }
    total.fp += seg_fp;
    total.fn += seg_fn;
    total.substitutions += std::min(seg_fp, seg_fn);
    total.deletions += std::max(0L, seg_fn - seg_fp);
    total.insertions += std::max(0L, seg_fp - seg_fn);
  }
  return total;
}

/// With no references at all, ER counts insertions against one, recall is 1.
inline SeldScores seld_scores(const SeldCounts& c) {
  SeldScores s;
  s.er20 = double(c.substitutions + c.deletions + c.insertions) / double(std::max(c.n_ref, 1L));
  const double denom = double(c.tp) + 0.5 * double(c.fp + c.fn);
  s.f20 = denom > 0.0 ? double(c.tp) / denom : 1.0;
  if (c.matched > 0) s.le_cd = c.matched_deg / double(c.matched);
  s.lr_cd = c.n_ref > 0 ? double(c.matched) / double(c.n_ref) : 1.0;
  return s;
}

inline SeldScores seld_scores(const SeldOutput& pred, const SeldOutput& ref, const SeldOptions& o = {}) {
  return seld_scores(seld_counts(pred, ref, o));
}

inline SeldScores seld_scores(const std::vector<SeldOutput>& pred, const std::vector<SeldOutput>& ref,
                              const SeldOptions& o = {}) {
  if (pred.size() != ref.size()) throw Error("seld_scores: scene counts differ");
  SeldCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c += seld_counts(pred[i], ref[i], o);
  return seld_scores(c);
}

namespace metrics_detail {
inline std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}
}  // namespace metrics_detail

inline void write_scores_csv(const SeldScores& s, std::ostream& out) {
  using metrics_detail::fmt;
  out << "metric,value\n"
      << "er20," << fmt(s.er20, 6) << "\n"
      << "f20," << fmt(s.f20, 6) << "\n"
      << "le_cd," << fmt(s.le_cd, 6) << "\n"
      << "lr_cd," << fmt(s.lr_cd, 6) << "\n";
}

inline std::string format_scores(const SeldScores& s, const std::string& label = "model") {
  using metrics_detail::fmt;
  std::ostringstream os;
  os << std::left << std::setw(12) << "" << std::right << std::setw(8) << "ER20" << std::setw(8) << "F20"
     << std::setw(9) << "LE_CD" << std::setw(8) << "LR_CD" << "\n"
     << std::left << std::setw(12) << label << std::right << std::setw(8) << fmt(s.er20, 2) << std::setw(7)
     << fmt(100.0 * s.f20, 0) << "%" << std::setw(8) << fmt(s.le_cd, 1) << "°" << std::setw(7)
     << fmt(100.0 * s.lr_cd, 0) << "%\n";
  return os.str();
}

// ------------------------------------------------------------ DOA error table

/// Angular errors per (noas, cond) cell, 1 <= noas <= N, 0 <= cond < noas.
class DoaErrorTable {
 public:
  explicit DoaErrorTable(int n_tracks = 3) : n_(n_tracks), cells_(std::size_t(n_tracks * n_tracks)) {
    if (n_tracks < 1) throw Error("DoaErrorTable: n_tracks must be positive");
  }
  int n_tracks() const { return n_; }

  void add(int noas, int cond, double deg) { cell(noas, cond).push_back(deg); }
  const std::vector<double>& samples(int noas, int cond) const {
    return const_cast<DoaErrorTable*>(this)->cell(noas, cond);
  }
  std::size_t count(int noas, int cond) const { return samples(noas, cond).size(); }
  double mean(int noas, int cond) const {
    const auto& s = samples(noas, cond);
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (double v : s) acc += v;
    return acc / double(s.size());
  }
  double median(int noas, int cond) const {
    auto s = samples(noas, cond);
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t mid = s.size() / 2;
    std::nth_element(s.begin(), s.begin() + std::ptrdiff_t(mid), s.end());
    if (s.size() % 2) return s[mid];
    const double hi = s[mid];
    return 0.5 * (*std::max_element(s.begin(), s.begin() + std::ptrdiff_t(mid)) + hi);
  }
  DoaErrorTable& operator+=(const DoaErrorTable& o) {
    if (o.n_ != n_) throw Error("DoaErrorTable: size mismatch");
    for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i].insert(cells_[i].end(), o.cells_[i].begin(), o.cells_[i].end());
    return *this;
  }

 private:
  std::vector<double>& cell(int noas, int cond) {
    if (noas < 1 || noas > n_ || cond < 0 || cond >= noas)
      throw Error("DoaErrorTable: no cell (noas=" + std::to_string(noas) + ", cond=" + std::to_string(cond) + ")");
    return cells_[std::size_t((noas - 1) * n_ + cond)];
  }
  int n_;
  std::vector<std::vector<double>> cells_;
};

/// For every frame with m references and every j < m, conditions on the
/// first j reference rows and records the angle from the prediction to the
/// nearest remaining reference. A prediction at the origin counts as 180°.
inline void accumulate_doa_errors(FramePredictor& loc, const FeatureTensor& features, const StackedTracks& truth,
                                  DoaErrorTable& table) {
  const int T = truth.n_frames();
  if (features.label_frames() != T) throw Error("doa_error_table: features and reference differ in frame count");
  const int N = std::min(truth.n_tracks(), table.n_tracks());
  for (int j = 0; j < N; ++j) {
    bool any = false;
    CondSets cond(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      cond[std::size_t(t)] = truth.doas_below(t, j);
      any = any || truth.occupancy(t) > j;
    }
    if (!any) continue;
    const Mat<double> y = inference_detail::checked_predict(loc, features, cond, 3, "doa_error_table");
    for (int t = 0; t < T; ++t) {
      const int m = std::min(truth.occupancy(t), N);
      if (m <= j) continue;
      const Vec3 v{y(t, 0), y(t, 1), y(t, 2)};
      double err = 180.0;
      if (!is_zero(v) && is_finite(v))
        for (int r = j; r < m; ++r) err = std::min(err, angular_distance(v, truth.at(r, t).xyz));
      table.add(m, j, err);
    }
  }
}

inline void write_doa_table_csv(const DoaErrorTable& t, std::ostream& out) {
  out << "noas,cond,mean_deg,count\n";
  for (int m = 1; m <= t.n_tracks(); ++m)
    for (int j = 0; j < m; ++j)
      out << m << "," << j << "," << metrics_detail::fmt(t.mean(m, j), 4) << "," << t.count(m, j) << "\n";
}

inline std::string format_doa_table(const DoaErrorTable& t) {
  using metrics_detail::fmt;
  std::ostringstream os;
  os << "noas  #cond  mean[deg]  median[deg]  count\n";
  for (int m = 1; m <= t.n_tracks(); ++m)
    for (int j = 0; j < m; ++j)
      os << std::setw(4) << m << std::setw(7) << j << std::setw(11) << fmt(t.mean(m, j), 1) << std::setw(13)
         << fmt(t.median(m, j), 1) << std::setw(7) << t.count(m, j) << "\n";
  return os.str();
}

// ------------------------------------------------------------ conditional accuracy

struct ClassAccuracyCounts {
  long events = 0;
  long correct = 0;
  long misses = 0;        // known-class event predicted as K
  long empty_frames = 0;  // frames conditioned on the origin
  long false_alarms = 0;  // of those, predicted as a known class

  ClassAccuracyCounts& operator+=(const ClassAccuracyCounts& o) {
    events += o.events;
    correct += o.correct;
    misses += o.misses;
    empty_frames += o.empty_frames;
    false_alarms += o.false_alarms;
    return *this;
  }
  double accuracy() const { return events ? double(correct) / double(events) : std::numeric_limits<double>::quiet_NaN(); }
  double miss_rate() const { return events ? double(misses) / double(events) : std::numeric_limits<double>::quiet_NaN(); }
  double false_alarm_rate() const {
    return empty_frames ? double(false_alarms) / double(empty_frames) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// One pass per reference row conditioned on that row's DOAs, plus one pass
/// with the origin everywhere for the false-alarm rate.
inline void accumulate_class_accuracy(FramePredictor& cls, const FeatureTensor& features, const StackedTracks& truth,
                                      ClassAccuracyCounts& acc) {
  const int T = truth.n_frames();
  const int K = truth.n_classes();
  if (features.label_frames() != T) throw Error("conditional_accuracy: features and reference differ in frame count");
  auto argmax = [](const Mat<double>& p, int t) {
    Eigen::Index a = 0;
    p.row(t).maxCoeff(&a);
    return int(a);
  };
  for (int r = 0; r < truth.n_tracks(); ++r) {
    bool any = false;
    CondSets cond(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
      if (!truth.at(r, t).empty()) {
        cond[std::size_t(t)] = {truth.at(r, t).xyz};
        any = true;
      }
    if (!any) continue;
    const Mat<double> p = inference_detail::checked_predict(cls, features, cond, K + 1, "conditional_accuracy");
    for (int t = 0; t < T; ++t) {
      if (truth.at(r, t).empty()) continue;
      const int a = argmax(p, t);
      ++acc.events;
      acc.correct += a == truth.at(r, t).cls ? 1 : 0;
      acc.misses += a == K ? 1 : 0;
    }
  }
  const CondSets empty(static_cast<std::size_t>(T));
  const Mat<double> p = inference_detail::checked_predict(cls, features, empty, K + 1, "conditional_accuracy");
  for (int t = 0; t < T; ++t) {
    ++acc.empty_frames;
    acc.false_alarms += argmax(p, t) != K ? 1 : 0;
  }
}

}  // namespace coloc
