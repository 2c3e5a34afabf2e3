#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/geometry.hpp"
#include "coloc/rng.hpp"

namespace coloc {

/// One active source in one label frame (100 ms).
struct FrameEvent {
  int frame = 0;
  int track_id = 0;
  int class_id = 0;
  Doa doa;

  friend bool operator==(const FrameEvent&, const FrameEvent&) = default;
};

/// N x T grid of (xyz, class) cells, bottom-compacted per frame. Empty cells
/// hold the origin and the silence class K.
class StackedTracks {
 public:
  struct Cell {
    Vec3 xyz;
    int cls = 0;
    bool empty() const { return is_zero(xyz); }
    friend bool operator==(const Cell&, const Cell&) = default;
  };

  StackedTracks() = default;
  StackedTracks(int n_tracks, int n_frames, int n_classes)
      : n_tracks_(n_tracks), n_frames_(n_frames), n_classes_(n_classes) {
    if (n_tracks < 1 || n_frames < 0 || n_classes < 1) throw Error("StackedTracks: invalid dimensions");
    cells_.assign(std::size_t(n_tracks) * std::size_t(n_frames), Cell{Vec3{}, n_classes});
  }

  int n_tracks() const { return n_tracks_; }
  int n_frames() const { return n_frames_; }
  int n_classes() const { return n_classes_; }

  const Cell& at(int row, int frame) const { return cells_[index(row, frame)]; }
  Cell& at(int row, int frame) { return cells_[index(row, frame)]; }

  void clear_cell(int row, int frame) { at(row, frame) = Cell{Vec3{}, n_classes_}; }

  /// Number of non-empty cells in a frame.
  int occupancy(int frame) const {
    int n = 0;
    for (int r = 0; r < n_tracks_; ++r) n += at(r, frame).empty() ? 0 : 1;
    return n;
  }

  /// Non-empty DOAs of rows [0, rows) at a frame, in row order.
  std::vector<Doa> doas_below(int frame, int rows) const {
    std::vector<Doa> out;
    for (int r = 0; r < std::min(rows, n_tracks_); ++r)
      if (!at(r, frame).empty()) out.push_back(at(r, frame).xyz);
    return out;
  }

  /// Re-packs each frame's non-empty cells towards row 0, keeping their order.
  void compact() {
    for (int t = 0; t < n_frames_; ++t) {
      int w = 0;
      for (int r = 0; r < n_tracks_; ++r) {
        if (at(r, t).empty()) continue;
        if (w != r) at(w, t) = at(r, t);
        ++w;
      }
      for (; w < n_tracks_; ++w) clear_cell(w, t);
    }
  }

  /// Checks bottom-compaction and the origin <=> class K correspondence.
  /// Returns an empty string when valid, otherwise a description.
  std::string violation(double unit_tol = 1e-9) const {
    for (int t = 0; t < n_frames_; ++t) {
      bool seen_empty = false;
      for (int r = 0; r < n_tracks_; ++r) {
        const Cell& c = at(r, t);
        const std::string where = " at row " + std::to_string(r) + ", frame " + std::to_string(t);
        if (c.empty()) {
          if (c.cls != n_classes_) return "empty cell without silence class" + where;
          seen_empty = true;
          continue;
        }
        if (seen_empty) return "non-empty cell above an empty one" + where;
        if (c.cls < 0 || c.cls >= n_classes_) return "non-empty cell with class outside [0, K)" + where;
        if (unit_tol >= 0.0 && !is_unit(c.xyz, unit_tol)) return "non-unit DOA" + where;
      }
    }
    return {};
  }

  /// Row-major N x T x 4 tensor (x, y, z, class index).
  std::vector<float> to_tensor() const {
    std::vector<float> out;
    out.reserve(cells_.size() * 4);
    for (const Cell& c : cells_) {
      out.push_back(float(c.xyz.x));
      out.push_back(float(c.xyz.y));
      out.push_back(float(c.xyz.z));
      out.push_back(float(c.cls));
    }
    return out;
  }

  friend bool operator==(const StackedTracks&, const StackedTracks&) = default;

 private:
  std::size_t index(int row, int frame) const {
    if (row < 0 || row >= n_tracks_ || frame < 0 || frame >= n_frames_)
      throw Error("StackedTracks: cell (" + std::to_string(row) + ", " + std::to_string(frame) + ") out of range");
    return std::size_t(row) * std::size_t(n_frames_) + std::size_t(frame);
  }

  int n_tracks_ = 0;
  int n_frames_ = 0;
  int n_classes_ = 0;
  std::vector<Cell> cells_;
};

/// Keeps at most `max_tracks` events per frame, preferring the lowest track ids.
/// Relative order of the kept events is preserved.
inline std::vector<FrameEvent> truncate_overlap(const std::vector<FrameEvent>& events, int max_tracks = 3) {
  std::map<int, std::vector<int>> ids_per_frame;
  for (const auto& e : events) ids_per_frame[e.frame].push_back(e.track_id);
  std::map<int, std::set<int>> kept;
  for (auto& [frame, ids] : ids_per_frame) {
    std::sort(ids.begin(), ids.end());
    const std::size_t n = std::min<std::size_t>(ids.size(), std::size_t(std::max(max_tracks, 0)));
    kept[frame].insert(ids.begin(), ids.begin() + std::ptrdiff_t(n));
  }
  std::vector<FrameEvent> out;
  for (const auto& e : events)
    if (kept[e.frame].count(e.track_id)) out.push_back(e);
  return out;
}

struct StackOptions {
  /// Tolerance of the unit-norm check on event DOAs; negative disables it.
  double unit_tol = 1e-9;
};

/// Builds the stacked-tracks tensor: per frame, active events ordered by
/// track id fill rows 0, 1, ... from the bottom. Events beyond N in a frame
/// are dropped (highest track ids first).
inline StackedTracks stack_tracks(const std::vector<FrameEvent>& events, int n_tracks, int n_frames, int n_classes,
                                  StackOptions opts = {}) {
  StackedTracks st(n_tracks, n_frames, n_classes);
  std::map<int, std::vector<const FrameEvent*>> per_frame;
  std::set<std::pair<int, int>> seen;
  for (const auto& e : events) {
    if (e.frame < 0 || e.frame >= n_frames)
      throw Error("stack_tracks: frame " + std::to_string(e.frame) + " outside [0, " + std::to_string(n_frames) + ")");
    if (e.class_id < 0 || e.class_id >= n_classes)
      throw Error("stack_tracks: class " + std::to_string(e.class_id) + " outside [0, K)");
    if (!seen.insert({e.frame, e.track_id}).second)
      throw Error("stack_tracks: duplicate (frame " + std::to_string(e.frame) + ", track " +
                  std::to_string(e.track_id) + ")");
    if (is_zero(e.doa) || (opts.unit_tol >= 0.0 && !is_unit(e.doa, opts.unit_tol)))
      throw Error("stack_tracks: non-unit DOA at frame " + std::to_string(e.frame) + ", track " +
                  std::to_string(e.track_id));
    per_frame[e.frame].push_back(&e);
  }
  for (auto& [frame, list] : per_frame) {
    std::sort(list.begin(), list.end(), [](const FrameEvent* a, const FrameEvent* b) { return a->track_id < b->track_id; });
    const int n = std::min<int>(int(list.size()), n_tracks);
    for (int r = 0; r < n; ++r) st.at(r, frame) = {list[std::size_t(r)]->doa, list[std::size_t(r)]->class_id};
  }
  return st;
}

/// Reorders rows by `order` (new position i takes source row order[i]) and
/// re-compacts every frame bottom-up.
inline StackedTracks permute_and_restack(const StackedTracks& st, const std::vector<int>& order) {
  const int n = st.n_tracks();
  if (int(order.size()) != n) throw Error("permute_and_restack: permutation size mismatch");
  std::vector<int> check(order);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < n; ++i)
    if (check[std::size_t(i)] != i) throw Error("permute_and_restack: not a permutation");
  StackedTracks out(n, st.n_frames(), st.n_classes());
  for (int t = 0; t < st.n_frames(); ++t)
    for (int i = 0; i < n; ++i) out.at(i, t) = st.at(order[std::size_t(i)], t);
  out.compact();
  return out;
}

/// Applies one uniformly random row permutation to the whole tensor.
inline StackedTracks permute_and_restack(const StackedTracks& st, Rng& rng) {
  std::vector<int> order(std::size_t(st.n_tracks()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return permute_and_restack(st, order);
}

// Meta CSV: frame,class,track,azimuth_deg,elevation_deg (no header).

/// Fixed 6-decimal rendering with trailing zeros stripped; "-0" becomes "0".
inline std::string format_angle(double deg) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", deg);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

inline std::string format_meta_row(const FrameEvent& e) {
  AzEl a = doa_to_azel(e.doa);
  double az = std::round(a.azimuth * 1e6) / 1e6;
  if (az >= 180.0) az -= 360.0;
  return std::to_string(e.frame) + "," + std::to_string(e.class_id) + "," + std::to_string(e.track_id) + "," +
         format_angle(az) + "," + format_angle(a.elevation);
}

inline std::vector<FrameEvent> parse_meta_csv(std::istream& in, int n_classes, const std::string& source = "<stream>") {
  std::vector<FrameEvent> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fail = [&](const std::string& why) {
      return Error(source + ":" + std::to_string(line_no) + ": " + why + " in row '" + line + "'");
    };
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw fail("expected 5 fields");
    FrameEvent e;
    double az = 0.0, el = 0.0;
    try {
      std::size_t pos = 0;
      const auto int_field = [&](const std::string& f) {
        const int v = std::stoi(f, &pos);
        if (pos != f.size()) throw std::invalid_argument(f);
        return v;
      };
      const auto real_field = [&](const std::string& f) {
        const double v = std::stod(f, &pos);
        if (pos != f.size()) throw std::invalid_argument(f);
        return v;
      };
      e.frame = int_field(fields[0]);
      e.class_id = int_field(fields[1]);
      e.track_id = int_field(fields[2]);
      az = real_field(fields[3]);
      el = real_field(fields[4]);
    } catch (const std::exception&) {
      throw fail("malformed number");
    }
    if (e.frame < 0) throw fail("negative frame");
    if (e.class_id < 0 || e.class_id >= n_classes) throw fail("class outside [0, " + std::to_string(n_classes) + ")");
    try {
      e.doa = azel_to_doa({az, el});
    } catch (const Error& err) {
      throw fail(err.what());
    }
    out.push_back(e);
  }
  return out;
}

inline std::vector<FrameEvent> read_meta_csv(const std::string& path, int n_classes) {
  std::ifstream in(path);
  if (!in) throw Error("read_meta_csv: cannot open " + path);
  return parse_meta_csv(in, n_classes, path);
}

inline void write_meta_csv(const std::vector<FrameEvent>& events, std::ostream& out) {
  for (const auto& e : events) out << format_meta_row(e) << '\n';
}

inline void write_meta_csv(const std::vector<FrameEvent>& events, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_meta_csv: cannot open " + path);
  write_meta_csv(events, out);
  if (!out) throw Error("write_meta_csv: write failed for " + path);
}

}  // namespace coloc
