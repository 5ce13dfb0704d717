#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "weakloc/nn.hpp"
#include "weakloc/tape.hpp"

namespace weakloc {

// Axis-aligned box in continuous input-pixel coordinates: pixel (r,c) covers
// [r,r+1)x[c,c+1) with its center at (r+0.5, c+0.5), so an image is the
// rectangle [0,W]x[0,H]. The box spans [cx-w/2, cx+w/2] x [cy-h/2, cy+h/2].
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x0() const { return cx - 0.5 * w; }
  double x1() const { return cx + 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

inline Box box_from_extents(double x0, double y0, double x1, double y1) {
  return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

struct AnchorSet {
  std::vector<Box> anchors;
  std::vector<int> sizes;
  std::vector<int> strides;
  std::vector<double> ratios;
  int image_h = 0, image_w = 0;
};

// Square anchors on a regular grid per (size, stride) pair, placed so every
// anchor lies fully inside the image; ordered by scale then row-major.
inline AnchorSet generate_anchors(int image_h, int image_w, const std::vector<int>& sizes,
                                  const std::vector<int>& strides,
                                  const std::vector<double>& ratios = {1.0}) {
  if (sizes.size() != strides.size())
    throw config_error("anchors: sizes and strides must have the same length");
  for (double r : ratios)
    if (r != 1.0) throw config_error("anchors: only aspect ratio 1 is supported");
  AnchorSet set;
  set.sizes = sizes;
  set.strides = strides;
  set.ratios = ratios.empty() ? std::vector<double>{1.0} : ratios;
  set.image_h = image_h;
  set.image_w = image_w;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const int size = sizes[s], stride = strides[s];
    if (size < 1 || stride < 1) throw config_error("anchors: sizes and strides must be positive");
    const int nx = image_w >= size ? (image_w - size) / stride + 1 : 0;
    const int ny = image_h >= size ? (image_h - size) / stride + 1 : 0;
    if (nx < 1 || ny < 1)
      throw config_error("anchors: size " + std::to_string(size) + " with stride " +
                         std::to_string(stride) + " places no anchors on a " +
                         std::to_string(image_w) + "x" + std::to_string(image_h) + " image");
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
        set.anchors.push_back(Box{ix * double(stride) + 0.5 * size,
                                  iy * double(stride) + 0.5 * size, double(size), double(size)});
  }
  return set;
}

struct RefinedProposal {
  int anchor_index = -1;
  int class_index = -1;
  double confidence = 0.0;  // logistic of the confidence regressor output
  Box box;
};

// Counters for degenerate geometry encountered in the sampling ops.
struct Diagnostics {
  long degenerate_boxes = 0;
};

namespace detail {

// Bilinear taps at continuous point (y, x), pixel-center convention with
// replicated borders. `in_x`/`in_y` mark where the coordinate derivative is
// nonzero (strictly between the first and last pixel centers).
struct BilinearTap {
  int r0, r1, c0, c1;
  double fy, fx;
  bool in_y, in_x;
};

inline BilinearTap bilinear_tap(int h, int w, double y, double x) {
  BilinearTap t;
  double u = x - 0.5, v = y - 0.5;
  t.in_x = u > 0.0 && u < double(w - 1);
  t.in_y = v > 0.0 && v < double(h - 1);
  u = std::clamp(u, 0.0, double(w - 1));
  v = std::clamp(v, 0.0, double(h - 1));
  t.c0 = std::min(int(u), w - 1);
  t.r0 = std::min(int(v), h - 1);
  t.c1 = std::min(t.c0 + 1, w - 1);
  t.r1 = std::min(t.r0 + 1, h - 1);
  t.fx = u - t.c0;
  t.fy = v - t.r0;
  return t;
}

inline double tap_value(const BilinearTap& t, const double* plane, int w) {
  const double v00 = plane[t.r0 * w + t.c0], v01 = plane[t.r0 * w + t.c1];
  const double v10 = plane[t.r1 * w + t.c0], v11 = plane[t.r1 * w + t.c1];
  return (1 - t.fy) * ((1 - t.fx) * v00 + t.fx * v01) + t.fy * ((1 - t.fx) * v10 + t.fx * v11);
}

inline double tap_dx(const BilinearTap& t, const double* plane, int w) {
  if (!t.in_x) return 0.0;
  const double v00 = plane[t.r0 * w + t.c0], v01 = plane[t.r0 * w + t.c1];
  const double v10 = plane[t.r1 * w + t.c0], v11 = plane[t.r1 * w + t.c1];
  return (1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
}

inline double tap_dy(const BilinearTap& t, const double* plane, int w) {
  if (!t.in_y) return 0.0;
  const double v00 = plane[t.r0 * w + t.c0], v01 = plane[t.r0 * w + t.c1];
  const double v10 = plane[t.r1 * w + t.c0], v11 = plane[t.r1 * w + t.c1];
  return (1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01);
}

inline void tap_scatter(const BilinearTap& t, double* plane, int w, double g) {
  plane[t.r0 * w + t.c0] += g * (1 - t.fy) * (1 - t.fx);
  plane[t.r0 * w + t.c1] += g * (1 - t.fy) * t.fx;
  plane[t.r1 * w + t.c0] += g * t.fy * (1 - t.fx);
  plane[t.r1 * w + t.c1] += g * t.fy * t.fx;
}

}  // namespace detail

// RoiAlign over a 1/4-scale feature map: one bilinear sample per output cell,
// taken at the cell center of a regular grid inside the box (box given in
// input pixels). Differentiable w.r.t. the features; the box is fixed.
inline Var roi_align(Var features, Box box, int out_h, int out_w, double feature_scale = 0.25,
                     Diagnostics* diag = nullptr) {
  Tape& t = *features.tape;
  const Shape& fs = t.shape(features);
  if (fs.size() != 3) throw shape_error("roi_align: expected [Q,H,W], got " + shape_str(fs));
  if (out_h < 1 || out_w < 1) throw shape_error("roi_align: output size must be >= 1x1");
  const int q = fs[0], fh = fs[1], fw = fs[2];
  double bw = box.w, bh = box.h;
  if (bw < 1.0 || bh < 1.0) {
    if (diag) diag->degenerate_boxes++;
    bw = std::max(bw, 1.0);
    bh = std::max(bh, 1.0);
  }
  const double x0 = box.cx - 0.5 * bw, y0 = box.cy - 0.5 * bh;

  std::vector<detail::BilinearTap> taps(std::size_t(out_h) * out_w);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      const double y = (y0 + (i + 0.5) * bh / out_h) * feature_scale;
      const double x = (x0 + (j + 0.5) * bw / out_w) * feature_scale;
      taps[std::size_t(i) * out_w + j] = detail::bilinear_tap(fh, fw, y, x);
    }

  const auto& fv = t.value(features);
  std::vector<double> out(std::size_t(q) * out_h * out_w);
  for (int c = 0; c < q; ++c) {
    const double* plane = &fv[std::size_t(c) * fh * fw];
    double* op = &out[std::size_t(c) * out_h * out_w];
    for (std::size_t i = 0; i < taps.size(); ++i) op[i] = detail::tap_value(taps[i], plane, fw);
  }

  const int ifeat = features.id, io = t.next_id();
  return t.make({q, out_h, out_w}, std::move(out), {features},
                [ifeat, io, q, fh, fw, taps = std::move(taps)](Tape& t) {
    const auto& g = t.grad(io);
    auto& gf = t.grad(ifeat);
    const std::size_t hw = taps.size();
    for (int c = 0; c < q; ++c) {
      double* plane = &gf[std::size_t(c) * fh * fw];
      const double* gp = &g[std::size_t(c) * hw];
      for (std::size_t i = 0; i < hw; ++i) detail::tap_scatter(taps[i], plane, fw, gp[i]);
    }
  });
}

namespace detail {

// One axis of the delta decoding shared by apply_deltas and refine_boxes:
// shift by d_c * anchor size with d_c clamped to [-1,1] so a box can never be
// pushed fully off the image, rescale by exp(d_s) with the exponent clamped
// to [-4,4], clamp the extents to [0, limit], enforce a 1-pixel minimum.
struct AxisRefine {
  double center, size;
  double dc_ddc, dc_dds;  // d center / d (d_c, d_s)
  double ds_ddc, ds_dds;  // d size   / d (d_c, d_s)
};

inline AxisRefine refine_axis(double anchor_c, double anchor_s, double d_c, double d_s,
                              double limit) {
  const double ds_cl = std::clamp(d_s, -4.0, 4.0);
  const double gs = (d_s > -4.0 && d_s < 4.0) ? 1.0 : 0.0;
  const double dc_cl = std::clamp(d_c, -1.0, 1.0);
  const double gc = (d_c > -1.0 && d_c < 1.0) ? 1.0 : 0.0;
  const double s1 = anchor_s * std::exp(ds_cl);
  const double c1 = anchor_c + dc_cl * anchor_s;
  const double e0 = c1 - 0.5 * s1, e1 = c1 + 0.5 * s1;
  const double m0 = (e0 > 0.0 && e0 < limit) ? 1.0 : 0.0;
  const double m1 = (e1 > 0.0 && e1 < limit) ? 1.0 : 0.0;
  const double e0c = std::clamp(e0, 0.0, limit);
  const double e1c = std::clamp(e1, 0.0, limit);
  const double raw = e1c - e0c;
  const double mw = raw > 1.0 ? 1.0 : 0.0;
  AxisRefine r;
  r.center = 0.5 * (e0c + e1c);
  r.size = std::max(raw, 1.0);
  // the minimum-size guard can push a collapsed box past the border; nudge
  // the center back inside (zero subgradient while the nudge is active)
  const double half = 0.5 * r.size;
  const double mc = (r.center > half && r.center < limit - half) ? 1.0 : 0.0;
  r.center = std::clamp(r.center, half, limit - half);
  r.dc_ddc = 0.5 * anchor_s * (m0 + m1) * mc * gc;
  r.dc_dds = 0.25 * s1 * gs * (m1 - m0) * mc;
  r.ds_ddc = mw * anchor_s * (m1 - m0) * gc;
  r.ds_dds = 0.5 * mw * s1 * gs * (m1 + m0);
  return r;
}

}  // namespace detail

// Faster-R-CNN style decoding of (dx, dy, dw, dh) against an anchor, clamped
// to the image.
inline Box apply_deltas(const Box& anchor, const std::array<double, 4>& d, int image_w,
                        int image_h) {
  const auto ax = detail::refine_axis(anchor.cx, anchor.w, d[0], d[2], double(image_w));
  const auto ay = detail::refine_axis(anchor.cy, anchor.h, d[1], d[3], double(image_h));
  return Box{ax.center, ay.center, ax.size, ay.size};
}

// Differentiable batch version: deltas [N,4] rows (dx, dy, dw, dh) against a
// fixed anchor list; output rows are (cx, cy, w, h).
inline Var refine_boxes(const std::vector<Box>& anchors, Var deltas, int image_w, int image_h) {
  Tape& t = *deltas.tape;
  const Shape& ds = t.shape(deltas);
  if (ds.size() != 2 || ds[1] != 4)
    throw shape_error("refine_boxes: deltas must be [N,4], got " + shape_str(ds));
  if (std::size_t(ds[0]) != anchors.size())
    throw shape_error("refine_boxes: " + std::to_string(anchors.size()) + " anchors vs " +
                      std::to_string(ds[0]) + " delta rows");
  const int n = ds[0];
  const auto& dv = t.value(deltas);
  std::vector<double> out(std::size_t(n) * 4);
  for (int i = 0; i < n; ++i) {
    const double* d = &dv[std::size_t(i) * 4];
    const Box b = apply_deltas(anchors[i], {d[0], d[1], d[2], d[3]}, image_w, image_h);
    double* o = &out[std::size_t(i) * 4];
    o[0] = b.cx;
    o[1] = b.cy;
    o[2] = b.w;
    o[3] = b.h;
  }
  const int idl = deltas.id, io = t.next_id();
  return t.make({n, 4}, std::move(out), {deltas},
                [idl, io, n, anchors, image_w, image_h](Tape& t) {
    const auto& g = t.grad(io);
    const auto& dv = t.value(idl);
    auto& gd = t.grad(idl);
    for (int i = 0; i < n; ++i) {
      const double* d = &dv[std::size_t(i) * 4];
      const double* gr = &g[std::size_t(i) * 4];
      const auto ax = detail::refine_axis(anchors[i].cx, anchors[i].w, d[0], d[2], double(image_w));
      const auto ay = detail::refine_axis(anchors[i].cy, anchors[i].h, d[1], d[3], double(image_h));
      double* gdr = &gd[std::size_t(i) * 4];
      gdr[0] += gr[0] * ax.dc_ddc + gr[2] * ax.ds_ddc;
      gdr[2] += gr[0] * ax.dc_dds + gr[2] * ax.ds_dds;
      gdr[1] += gr[1] * ay.dc_ddc + gr[3] * ay.ds_ddc;
      gdr[3] += gr[1] * ay.dc_dds + gr[3] * ay.ds_dds;
    }
  });
}

// Bilinear crop of a box region to a fixed output size, differentiable w.r.t.
// both the image and the box coordinates (spatial-transformer style). The box
// is a 4-vector (cx, cy, w, h) in input pixels; sizes below one pixel clamp
// to one and stop the size gradient.
inline Var crop_resize(Var image, Var box4, int out_h, int out_w, Diagnostics* diag = nullptr) {
  Tape& t = *image.tape;
  const Shape& is = t.shape(image);
  if (is.size() != 3) throw shape_error("crop_resize: expected [C,H,W], got " + shape_str(is));
  if (t.value(box4).size() != 4) throw shape_error("crop_resize: box must be a 4-vector");
  if (out_h < 1 || out_w < 1) throw shape_error("crop_resize: output size must be >= 1x1");
  const int ch = is[0], h = is[1], w = is[2];
  const auto& bv = t.value(box4);
  if ((bv[2] < 1.0 || bv[3] < 1.0) && diag) diag->degenerate_boxes++;

  auto sample_grid = [h, w, out_h, out_w](const std::vector<double>& b,
                                          std::vector<detail::BilinearTap>& taps) {
    const double bw = std::max(b[2], 1.0), bh = std::max(b[3], 1.0);
    const double x0 = b[0] - 0.5 * bw, y0 = b[1] - 0.5 * bh;
    taps.resize(std::size_t(out_h) * out_w);
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j)
        taps[std::size_t(i) * out_w + j] = detail::bilinear_tap(
            h, w, y0 + (i + 0.5) * bh / out_h, x0 + (j + 0.5) * bw / out_w);
  };

  std::vector<detail::BilinearTap> taps;
  sample_grid(bv, taps);
  const auto& iv = t.value(image);
  std::vector<double> out(std::size_t(ch) * out_h * out_w);
  for (int c = 0; c < ch; ++c) {
    const double* plane = &iv[std::size_t(c) * h * w];
    double* op = &out[std::size_t(c) * out_h * out_w];
    for (std::size_t i = 0; i < taps.size(); ++i) op[i] = detail::tap_value(taps[i], plane, w);
  }

  const int ii = image.id, ib = box4.id, io = t.next_id();
  return t.make({ch, out_h, out_w}, std::move(out), {image, box4},
                [ii, ib, io, ch, h, w, out_h, out_w, sample_grid](Tape& t) {
    const auto& g = t.grad(io);
    const auto& iv = t.value(ii);
    const auto& bv = t.value(ib);
    std::vector<detail::BilinearTap> taps;
    sample_grid(bv, taps);
    const bool need_di = t.requires_grad(ii);
    const bool need_db = t.requires_grad(ib);
    if (need_di) {
      auto& gi = t.grad(ii);
      for (int c = 0; c < ch; ++c) {
        double* plane = &gi[std::size_t(c) * h * w];
        const double* gp = &g[std::size_t(c) * taps.size()];
        for (std::size_t i = 0; i < taps.size(); ++i) detail::tap_scatter(taps[i], plane, w, gp[i]);
      }
    }
    if (need_db) {
      auto& gb = t.grad(ib);
      const double gw_gate = bv[2] > 1.0 ? 1.0 : 0.0;
      const double gh_gate = bv[3] > 1.0 ? 1.0 : 0.0;
      double dcx = 0, dcy = 0, dw = 0, dh = 0;
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
          const auto& tap = taps[std::size_t(i) * out_w + j];
          const double wx = (j + 0.5) / double(out_w) - 0.5;
          const double wy = (i + 0.5) / double(out_h) - 0.5;
          for (int c = 0; c < ch; ++c) {
            const double gg = g[(std::size_t(c) * out_h + i) * out_w + j];
            if (gg == 0.0) continue;
            const double* plane = &iv[std::size_t(c) * h * w];
            const double dvx = detail::tap_dx(tap, plane, w);
            const double dvy = detail::tap_dy(tap, plane, w);
            dcx += gg * dvx;
            dcy += gg * dvy;
            dw += gg * dvx * wx;
            dh += gg * dvy * wy;
          }
        }
      gb[0] += dcx;
      gb[1] += dcy;
      gb[2] += dw * gw_gate;
      gb[3] += dh * gh_gate;
    }
  });
}

inline Var crop_resize(Var image, const Box& box, int out_h, int out_w,
                       Diagnostics* diag = nullptr) {
  Var b = image.tape->constant(Shape{4}, {box.cx, box.cy, box.w, box.h});
  return crop_resize(image, b, out_h, out_w, diag);
}

}  // namespace weakloc
