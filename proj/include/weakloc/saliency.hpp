#pragma once

#include <vector>

#include "weakloc/regions.hpp"
#include "weakloc/tensor.hpp"

namespace weakloc {

// K per-class score maps at 1/4 input resolution.
struct SaliencyStack {
  enum class Kind { sal, rpn, fused, binary };

  int k = 0, h = 0, w = 0;
  std::vector<double> data;  // row-major [k][h][w]
  Kind kind = Kind::sal;

  SaliencyStack() = default;
  SaliencyStack(int k_, int h_, int w_, Kind kind_)
      : k(k_), h(h_), w(w_), data(std::size_t(k_) * h_ * w_, 0.0), kind(kind_) {}

  double* channel(int c) { return &data[std::size_t(c) * h * w]; }
  const double* channel(int c) const { return &data[std::size_t(c) * h * w]; }
  double& at(int c, int r, int cc) { return data[(std::size_t(c) * h + r) * w + cc]; }
  double at(int c, int r, int cc) const { return data[(std::size_t(c) * h + r) * w + cc]; }
};

// Per class, the confidence-weighted average of the box-interior indicators
// of all refined proposals, rendered at 1/`downscale` resolution with
// pixel-center-inside semantics. Classes whose confidences sum to zero give a
// zero map and are reported through `zero_conf_classes`.
inline SaliencyStack render_rpn_map(const std::vector<RefinedProposal>& proposals, int k, int h,
                                    int w, double downscale = 4.0,
                                    std::vector<int>* zero_conf_classes = nullptr) {
  SaliencyStack out(k, h, w, SaliencyStack::Kind::rpn);
  std::vector<double> conf_sum(k, 0.0);
  for (const auto& p : proposals) {
    if (p.class_index < 0 || p.class_index >= k)
      throw shape_error("render_rpn_map: class index out of range");
    conf_sum[p.class_index] += p.confidence;
  }
  for (const auto& p : proposals) {
    if (conf_sum[p.class_index] <= 0.0) continue;
    const double weight = p.confidence / conf_sum[p.class_index];
    if (weight == 0.0) continue;
    double* plane = out.channel(p.class_index);
    // pixel (r,c) center in input coordinates is ((r+0.5), (c+0.5)) * downscale
    const double x0 = p.box.x0(), x1 = p.box.x1(), y0 = p.box.y0(), y1 = p.box.y1();
    for (int r = 0; r < h; ++r) {
      const double py = (r + 0.5) * downscale;
      if (py < y0 || py >= y1) continue;
      for (int c = 0; c < w; ++c) {
        const double px = (c + 0.5) * downscale;
        if (px >= x0 && px < x1) plane[r * w + c] += weight;
      }
    }
  }
  if (zero_conf_classes)
    for (int c = 0; c < k; ++c)
      if (conf_sum[c] <= 0.0) zero_conf_classes->push_back(c);
  return out;
}

}  // namespace weakloc
