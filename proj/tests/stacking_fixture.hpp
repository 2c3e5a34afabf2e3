#pragma once

// The five-track example of the stacked-tracks construction (8 frames, 13
// classes, silence index 13). Values are the two-decimal display values and
// are not unit-norm, so the fixture is stacked with the unit check disabled.

#include <array>
#include <vector>

#include "coloc/tracks.hpp"

namespace stacking_example {

inline constexpr int kClasses = 13;
inline constexpr int kFrames = 8;
inline constexpr int kTracks = 3;

inline std::vector<coloc::FrameEvent> input_events() {
  using coloc::FrameEvent;
  return {
      // T0 (class 8)
      {3, 0, 8, {-0.9, 0.2, 0.1}},
      {4, 0, 8, {-0.9, 0.2, 0.1}},
      {5, 0, 8, {-0.8, 0.2, 0.2}},
      // T1 (class 11)
      {6, 1, 11, {0.7, 0.5, -0.5}},
      {7, 1, 11, {0.7, 0.5, -0.5}},
      // T2 (class 3)
      {0, 2, 3, {-0.5, 0.6, 0.3}},
      {1, 2, 3, {-0.4, 0.7, 0.3}},
      {2, 2, 3, {-0.4, 0.7, 0.3}},
      {3, 2, 3, {-0.4, 0.8, 0.3}},
      {4, 2, 3, {-0.3, 0.8, 0.4}},
      // T3 (class 7)
      {2, 3, 7, {0.5, -0.7, 0.5}},
      {3, 3, 7, {0.5, -0.7, 0.5}},
      {4, 3, 7, {0.5, -0.7, 0.5}},
      {5, 3, 7, {0.6, -0.7, 0.4}},
      {6, 3, 7, {0.6, -0.7, 0.4}},
      // T4 (class 3)
      {1, 4, 3, {0.2, 0.7, -0.2}},
      {2, 4, 3, {0.2, 0.8, -0.1}},
  };
}

struct Cell {
  double x, y, z;
  int cls;
};

inline constexpr Cell E{0.0, 0.0, 0.0, 13};

// expected[row][frame], rows ST0..ST2 (expected output)
inline constexpr std::array<std::array<Cell, kFrames>, kTracks> expected = {{
    {{{-0.5, 0.6, 0.3, 3}, {-0.4, 0.7, 0.3, 3}, {-0.4, 0.7, 0.3, 3}, {-0.9, 0.2, 0.1, 8}, {-0.9, 0.2, 0.1, 8},
      {-0.8, 0.2, 0.2, 8}, {0.7, 0.5, -0.5, 11}, {0.7, 0.5, -0.5, 11}}},
    {{E, {0.2, 0.7, -0.2, 3}, {0.5, -0.7, 0.5, 7}, {-0.4, 0.8, 0.3, 3}, {-0.3, 0.8, 0.4, 3}, {0.6, -0.7, 0.4, 7},
      {0.6, -0.7, 0.4, 7}, E}},
    {{E, E, {0.2, 0.8, -0.1, 3}, {0.5, -0.7, 0.5, 7}, {0.5, -0.7, 0.5, 7}, E, E, E}},
}};

inline coloc::StackedTracks stacked() {
  return coloc::stack_tracks(input_events(), kTracks, kFrames, kClasses, {.unit_tol = -1.0});
}

/// Number of cells that differ from the expected table.
inline int mismatches(const coloc::StackedTracks& st) {
  int bad = 0;
  for (int r = 0; r < kTracks; ++r)
    for (int t = 0; t < kFrames; ++t) {
      const auto& c = st.at(r, t);
      const Cell& e = expected[std::size_t(r)][std::size_t(t)];
      if (c.xyz.x != e.x || c.xyz.y != e.y || c.xyz.z != e.z || c.cls != e.cls) ++bad;
    }
  return bad;
}

}  // namespace stacking_example
