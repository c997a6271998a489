#include "gdeform/assignment.hpp"

#include <limits>

namespace gdeform {

std::vector<int> hungarian_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DimensionError("hungarian: cost must be square");
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[static_cast<size_t>(p[j] - 1)] = j - 1;
  return row_to_col;
}

std::vector<int> greedy_swap_assignment(const Mat& cost, int max_passes) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw DimensionError("assignment: cost must be square");

  std::vector<int> assign(n, -1);
  std::vector<char> used(n, 0);
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_c = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (used[j]) continue;
      if (cost(i, j) < best_c) {
        best_c = cost(i, j);
        best = j;
      }
    }
    assign[i] = best;
    used[best] = 1;
  }

  for (int pass = 0; pass < max_passes; ++pass) {
    bool improved = false;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double cur = cost(i, assign[i]) + cost(j, assign[j]);
        double swapped = cost(i, assign[j]) + cost(j, assign[i]);
        if (swapped < cur - 1e-15) {
          std::swap(assign[i], assign[j]);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  return assign;
}

}  // namespace gdeform
