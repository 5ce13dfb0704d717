#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "weakloc/metrics.hpp"
#include "weakloc/model.hpp"
#include "weakloc/saliency.hpp"

namespace weakloc {

// Per-class min-max scaling to [0,1]; constant channels become all zeros.
inline SaliencyStack normalize(const SaliencyStack& s) {
  SaliencyStack out = s;
  for (int c = 0; c < s.k; ++c) {
    double* p = out.channel(c);
    const std::size_t hw = std::size_t(s.h) * s.w;
    double lo = p[0], hi = p[0];
    for (std::size_t i = 0; i < hw; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    if (hi > lo) {
      const double inv = 1.0 / (hi - lo);
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - lo) * inv;
    } else {
      for (std::size_t i = 0; i < hw; ++i) p[i] = 0.0;
    }
  }
  return out;
}

// Elementwise product of two normalized stacks: x_FS = x_S (.) x_RPN.
inline SaliencyStack fuse(const SaliencyStack& sal, const SaliencyStack& rpn) {
  if (sal.k != rpn.k || sal.h != rpn.h || sal.w != rpn.w)
    throw shape_error("fuse: stack shapes differ");
  SaliencyStack out(sal.k, sal.h, sal.w, SaliencyStack::Kind::fused);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sal.data[i] * rpn.data[i];
  return out;
}

namespace detail {

// Two-pass union-find labeling, 8-connectivity; the test-side oracle uses a
// BFS flood fill instead.
inline void keep_largest_cc(const double* src, double threshold, int h, int w, double* dst) {
  const std::size_t hw = std::size_t(h) * w;
  std::vector<int> label(hw, -1);
  std::vector<int> parent;
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = std::size_t(r) * w + c;
      if (src[i] < threshold) continue;
      int lbl = -1;
      // neighbours already visited in scan order (8-connectivity)
      const int dr[4] = {0, -1, -1, -1};
      const int dc[4] = {-1, -1, 0, 1};
      for (int n = 0; n < 4; ++n) {
        const int nr = r + dr[n], nc = c + dc[n];
        if (nr < 0 || nc < 0 || nc >= w) continue;
        const int nl = label[std::size_t(nr) * w + nc];
        if (nl < 0) continue;
        if (lbl < 0)
          lbl = nl;
        else
          unite(lbl, nl);
      }
      if (lbl < 0) {
        lbl = int(parent.size());
        parent.push_back(lbl);
      }
      label[i] = lbl;
    }
  if (parent.empty()) {
    std::fill(dst, dst + hw, 0.0);
    return;
  }
  std::vector<long> count(parent.size(), 0);
  for (std::size_t i = 0; i < hw; ++i)
    if (label[i] >= 0) ++count[find(label[i])];
  int best = 0;
  for (std::size_t i = 1; i < count.size(); ++i)
    if (count[i] > count[best]) best = int(i);  // ties keep the first in scan order
  for (std::size_t i = 0; i < hw; ++i)
    dst[i] = (label[i] >= 0 && find(label[i]) == best) ? 1.0 : 0.0;
}

}  // namespace detail

// Threshold each channel (pixels >= threshold) and keep only its largest
// 8-connected component; an empty result is allowed.
inline SaliencyStack binarize_largest_cc(const SaliencyStack& s,
                                         const std::vector<double>& thresholds) {
  if (int(thresholds.size()) != s.k)
    throw shape_error("binarize_largest_cc: need one threshold per class");
  SaliencyStack out(s.k, s.h, s.w, SaliencyStack::Kind::binary);
  for (int c = 0; c < s.k; ++c)
    detail::keep_largest_cc(s.channel(c), thresholds[c], s.h, s.w, out.channel(c));
  return out;
}

// Tight box around the 1-pixels of a binary channel, scaled back to input
// coordinates; absent when the mask is empty.
inline std::optional<Box> mask_to_box(const SaliencyStack& binary, int channel,
                                      double upscale = 4.0) {
  const double* p = binary.channel(channel);
  int rmin = binary.h, rmax = -1, cmin = binary.w, cmax = -1;
  for (int r = 0; r < binary.h; ++r)
    for (int c = 0; c < binary.w; ++c)
      if (p[std::size_t(r) * binary.w + c] != 0.0) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  if (rmax < 0) return std::nullopt;
  Box b = box_from_extents(cmin * upscale, rmin * upscale, (cmax + 1) * upscale,
                           (rmax + 1) * upscale);
  return b;
}

struct DetectionResult {
  std::vector<std::optional<Box>> boxes;
  std::vector<double> thresholds;
  std::vector<long> cc_pixels;
};

inline DetectionResult detect(const SaliencyStack& map, const std::vector<double>& thresholds,
                              double upscale = 4.0) {
  const SaliencyStack binary = binarize_largest_cc(map, thresholds);
  DetectionResult out;
  out.thresholds = thresholds;
  for (int c = 0; c < map.k; ++c) {
    out.boxes.push_back(mask_to_box(binary, c, upscale));
    long n = 0;
    const double* p = binary.channel(c);
    for (std::size_t i = 0; i < std::size_t(binary.h) * binary.w; ++i) n += p[i] != 0.0;
    out.cc_pixels.push_back(n);
  }
  return out;
}

// ---- model forward for inference ----

enum class MapVariant { sal, det, mix };

inline MapVariant map_variant_from_string(const std::string& s) {
  if (s == "sal") return MapVariant::sal;
  if (s == "det") return MapVariant::det;
  if (s == "mix") return MapVariant::mix;
  throw config_error("unknown map variant '" + s + "' (expected sal, det or mix)");
}

inline const char* to_string(MapVariant v) {
  switch (v) {
    case MapVariant::sal: return "sal";
    case MapVariant::det: return "det";
    case MapVariant::mix: return "mix";
  }
  return "?";
}

struct InferMaps {
  SaliencyStack sal;    // normalized x_S
  SaliencyStack rpn;    // normalized x_RPN
  SaliencyStack fused;  // x_FS = sal (.) rpn
  std::vector<int> zero_conf_classes;
};

inline const SaliencyStack& pick_map(const InferMaps& maps, MapVariant v) {
  switch (v) {
    case MapVariant::sal: return maps.sal;
    case MapVariant::det: return maps.rpn;
    default: return maps.fused;
  }
}

struct InferenceOutput {
  std::vector<double> scores;  // logistic of the classification logits
  InferMaps maps;
  std::vector<RefinedProposal> proposals;
};

inline InferenceOutput run_inference(const SampleRecord& rec, const ModelParams& params,
                                     const ModelConfig& cfg, const AnchorSet& anchors,
                                     Diagnostics* diag = nullptr) {
  Tape tape;
  BoundParams bp = bind_params(tape, params);  // constants: no gradients at inference
  Var image3 = tape.constant(rec.image3());
  ClsForward cls = forward_cls(bp, image3, cfg);
  InferenceOutput out;
  for (double v : tape.value(cls.y_logit)) out.scores.push_back(sigmoid(v));

  const int ms = cfg.map_size();
  SaliencyStack raw_sal(cfg.num_classes, ms, ms, SaliencyStack::Kind::sal);
  raw_sal.data = tape.value(cls.x_s);
  out.proposals = forward_det_infer(bp, cls.x_fpn, anchors, cfg, diag);
  SaliencyStack raw_rpn =
      render_rpn_map(out.proposals, cfg.num_classes, ms, ms, 4.0, &out.maps.zero_conf_classes);
  out.maps.sal = normalize(raw_sal);
  out.maps.rpn = normalize(raw_rpn);
  out.maps.fused = fuse(out.maps.sal, out.maps.rpn);
  return out;
}

// ---- per-class threshold selection ----

inline std::vector<double> threshold_grid(double lo = 0.05, double hi = 0.95,
                                          double step = 0.05) {
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    const double v = lo + i * step;
    if (v > hi + 1e-12) break;
    grid.push_back(v);
  }
  if (grid.empty()) throw config_error("threshold grid is empty");
  return grid;
}

struct ThresholdSelection {
  std::vector<double> thresholds;
  std::vector<char> defaulted;  // classes with no annotations fell back to 0.5
};

// Per class, the grid value maximizing mean IoU against the annotated boxes;
// ties choose the lower threshold. Classes without annotations default to 0.5
// and are flagged.
inline ThresholdSelection select_thresholds(const std::vector<const SaliencyStack*>& maps,
                                            const std::vector<const SampleRecord*>& records,
                                            const std::vector<double>& grid,
                                            double upscale = 4.0) {
  if (maps.size() != records.size())
    throw shape_error("select_thresholds: maps/records length mismatch");
  if (maps.empty()) throw data_error("select_thresholds: empty sweep set");
  const int k = maps[0]->k;
  ThresholdSelection sel;
  sel.thresholds.assign(k, 0.5);
  sel.defaulted.assign(k, 0);
  for (int c = 0; c < k; ++c) {
    std::vector<std::size_t> annotated;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i]->boxes[c]) annotated.push_back(i);
    if (annotated.empty()) {
      sel.defaulted[c] = 1;
      continue;
    }
    double best_iou = -1.0, best_t = grid[0];
    for (double t : grid) {
      double mean = 0.0;
      for (std::size_t i : annotated) {
        SaliencyStack one(1, maps[i]->h, maps[i]->w, SaliencyStack::Kind::fused);
        std::copy(maps[i]->channel(c), maps[i]->channel(c) + one.data.size(), one.data.begin());
        const SaliencyStack bin = binarize_largest_cc(one, {t});
        const auto box = mask_to_box(bin, 0, upscale);
        mean += box ? iou(*box, *records[i]->boxes[c]) : 0.0;
      }
      mean /= double(annotated.size());
      if (mean > best_iou + 1e-15) {
        best_iou = mean;
        best_t = t;
      }
    }
    sel.thresholds[c] = best_t;
  }
  return sel;
}

}  // namespace weakloc
