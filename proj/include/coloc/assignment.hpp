#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "coloc/error.hpp"

namespace coloc {

/// Minimum-cost assignment for a rows x cols cost matrix (row-major).
/// Returns, per row, the assigned column or -1; min(rows, cols) pairs are
/// assigned. Shortest augmenting path with potentials, O(n^2 m).
inline std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  if (rows < 0 || cols < 0 || cost.size() != std::size_t(rows) * std::size_t(cols))
    throw Error("hungarian: cost matrix size mismatch");
  for (double c : cost)
    if (!std::isfinite(c)) throw Error("hungarian: non-finite cost");
  std::vector<int> result(std::size_t(rows), -1);
  if (rows == 0 || cols == 0) return result;
  const bool transposed = rows > cols;
  const int n = transposed ? cols : rows;
  const int m = transposed ? rows : cols;
  auto a = [&](int i, int j) {
    return transposed ? cost[std::size_t(j) * cols + std::size_t(i)] : cost[std::size_t(i) * cols + std::size_t(j)];
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(m) + 1, 0.0);
  std::vector<int> p(std::size_t(m) + 1, 0), way(std::size_t(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(std::size_t(m) + 1, inf);
    std::vector<char> used(std::size_t(m) + 1, 0);
    do {
      used[std::size_t(j0)] = 1;
      const int i0 = p[std::size_t(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(p[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    do {
      const int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[std::size_t(j)] == 0) continue;
    const int i = p[std::size_t(j)] - 1;
    if (transposed)
      result[std::size_t(j - 1)] = i;
    else
      result[std::size_t(i)] = j - 1;
  }
  return result;
}

inline double assignment_cost(const std::vector<double>& cost, int cols, const std::vector<int>& assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] >= 0) s += cost[i * std::size_t(cols) + std::size_t(assign[i])];
  return s;
}

}  // namespace coloc
