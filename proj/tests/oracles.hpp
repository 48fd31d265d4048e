// Independent reference implementations used to freeze expected test values.
// Everything here is deliberately brute-force and shares no code with the
// library paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracles {

/// CTC by exhaustive path enumeration: sum the probability of every frame
/// sequence whose blank-collapse equals the label. log_probs [N, V+1].
inline double ctc_brute_force_nll(const std::vector<double>& log_probs, int n_frames,
                                  int n_classes, const std::vector<int>& label) {
  std::vector<int> path(n_frames, 0);
  double total = 0.0;
  bool any = false;
  for (;;) {
    // collapse: drop repeats, then blanks
    std::vector<int> collapsed;
    int prev = -1;
    for (int c : path) {
      if (c != prev && c != 0) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == label) {
      double lp = 0.0;
      for (int t = 0; t < n_frames; ++t) lp += log_probs[t * n_classes + path[t]];
      total += std::exp(lp);
      any = true;
    }
    int pos = n_frames - 1;
    while (pos >= 0 && ++path[pos] == n_classes) {
      path[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  if (!any) return std::numeric_limits<double>::infinity();
  return -std::log(total);
}

/// Minimum assignment cost over all injective row->column maps.
inline double assignment_brute_force(const std::vector<double>& cost, int rows,
                                     int cols, std::vector<int>* best_map = nullptr) {
  std::vector<int> cols_idx(cols);
  for (int i = 0; i < cols; ++i) cols_idx[i] = i;
  double best = std::numeric_limits<double>::infinity();
  // Permute columns; the first `rows` entries define the map.
  std::sort(cols_idx.begin(), cols_idx.end());
  do {
    double c = 0.0;
    for (int g = 0; g < rows; ++g) c += cost[g * cols + cols_idx[g]];
    if (c < best) {
      best = c;
      if (best_map) best_map->assign(cols_idx.begin(), cols_idx.begin() + rows);
    }
  } while (std::next_permutation(cols_idx.begin(), cols_idx.end()));
  return best;
}

/// Textbook bilinear interpolation with zero padding, channels-last [H,W,C].
inline std::vector<double> bilinear_reference(const std::vector<double>& fmap, int H,
                                              int W, int C, double xn, double yn) {
  const double px = xn * W - 0.5;
  const double py = yn * H - 0.5;
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const double fx = px - x0;
  const double fy = py - y0;
  std::vector<double> out(C, 0.0);
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int xi = x0 + dx;
      const int yi = y0 + dy;
      if (xi < 0 || yi < 0 || xi >= W || yi >= H) continue;
      const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
      for (int c = 0; c < C; ++c) out[c] += w * fmap[(yi * W + xi) * C + c];
    }
  }
  return out;
}

}  // namespace oracles
