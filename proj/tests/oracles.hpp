// Independent reference implementations used only by tests. Each one takes a
// deliberately different algorithmic route than the library code it checks.
#pragma once

#include <algorithm>
#include <deque>
#include <vector>

#include "weakloc/regions.hpp"

namespace oracles {

// BFS flood fill largest-component reference (the library uses two-pass
// union-find labeling).
inline std::vector<double> flood_fill_largest(const std::vector<double>& map, double threshold,
                                              int h, int w) {
  std::vector<int> comp(std::size_t(h) * w, -1);
  int ncomp = 0;
  std::vector<long> sizes;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = std::size_t(r) * w + c;
      if (map[i] < threshold || comp[i] >= 0) continue;
      long size = 0;
      std::deque<std::pair<int, int>> queue{{r, c}};
      comp[i] = ncomp;
      while (!queue.empty()) {
        const auto [cr, cc] = queue.front();
        queue.pop_front();
        ++size;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            const int nr = cr + dr, nc = cc + dc;
            if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
            const std::size_t ni = std::size_t(nr) * w + nc;
            if (map[ni] >= threshold && comp[ni] < 0) {
              comp[ni] = ncomp;
              queue.emplace_back(nr, nc);
            }
          }
      }
      sizes.push_back(size);
      ++ncomp;
    }
  std::vector<double> out(std::size_t(h) * w, 0.0);
  if (ncomp == 0) return out;
  int best = 0;
  for (int i = 1; i < ncomp; ++i)
    if (sizes[i] > sizes[best]) best = i;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = comp[i] == best ? 1.0 : 0.0;
  return out;
}

// Pixel-counting IoU on a fine grid for integer-aligned boxes.
inline double pixel_iou(const weakloc::Box& a, const weakloc::Box& b, int grid = 256) {
  long inter = 0, uni = 0;
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      const bool in_a = x >= a.x0() && x < a.x1() && y >= a.y0() && y < a.y1();
      const bool in_b = x >= b.x0() && x < b.x1() && y >= b.y0() && y < b.y1();
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni ? double(inter) / double(uni) : 0.0;
}

// All-pairs AUC: mean over (positive, negative) pairs of win/tie/loss.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double u = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        u += 1.0;
      else if (scores[i] == scores[j])
        u += 0.5;
    }
  }
  return u / double(pairs);
}

}  // namespace oracles
