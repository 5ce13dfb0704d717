#pragma once

#include <cmath>
#include <vector>

#include "weakloc/tape.hpp"

namespace weakloc {

namespace detail {
inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
}

// 2-D convolution with zero padding. input [Cin,H,W], kernel [Cout,Cin,k,k].
inline Var conv2d(Var input, Var kernel, int stride, int pad) {
  Tape& t = *input.tape;
  const Shape& xs = t.shape(input);
  const Shape& ks = t.shape(kernel);
  if (xs.size() != 3) throw shape_error("conv2d: input must be [C,H,W], got " + shape_str(xs));
  if (ks.size() != 4) throw shape_error("conv2d: kernel must be [Co,Ci,k,k], got " + shape_str(ks));
  const int ci = xs[0], h = xs[1], w = xs[2];
  const int co = ks[0], kk = ks[2];
  if (ks[1] != ci)
    throw shape_error("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, got " +
                      std::to_string(ci));
  if (ks[3] != kk || kk % 2 == 0) throw shape_error("conv2d: kernel must be square with odd size");
  if (h + 2 * pad < kk || w + 2 * pad < kk)
    throw shape_error("conv2d: padded input smaller than kernel");
  if (stride < 1 || pad < 0) throw shape_error("conv2d: bad stride/pad");
  if ((h + 2 * pad - kk) % stride != 0 || (w + 2 * pad - kk) % stride != 0)
    throw shape_error("conv2d: non-integer output size for input " + shape_str(xs) + ", k=" +
                      std::to_string(kk) + ", stride=" + std::to_string(stride) + ", pad=" +
                      std::to_string(pad));
  const int ho = (h + 2 * pad - kk) / stride + 1;
  const int wo = (w + 2 * pad - kk) / stride + 1;

  const auto& xv = t.value(input);
  const auto& kv = t.value(kernel);
  std::vector<double> out(std::size_t(co) * ho * wo, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int ic = 0; ic < ci; ++ic) {
      const double* kp = &kv[(std::size_t(oc) * ci + ic) * kk * kk];
      const double* xc = &xv[std::size_t(ic) * h * w];
      double* yc = &out[std::size_t(oc) * ho * wo];
      for (int kr = 0; kr < kk; ++kr)
        for (int kc = 0; kc < kk; ++kc) {
          const double wt = kp[kr * kk + kc];
          if (wt == 0.0) continue;
          const int lo = std::max(0, detail::div_ceil(pad - kc, stride));
          const int hi = std::min(wo, (w - 1 - kc + pad) / stride + 1);
          for (int r = 0; r < ho; ++r) {
            const int ir = r * stride + kr - pad;
            if (ir < 0 || ir >= h) continue;
            const double* xrow = xc + std::size_t(ir) * w;
            double* yrow = yc + std::size_t(r) * wo;
            if (stride == 1) {
              const int off = kc - pad;
              for (int c = lo; c < hi; ++c) yrow[c] += wt * xrow[c + off];
            } else {
              for (int c = lo; c < hi; ++c) yrow[c] += wt * xrow[c * stride + kc - pad];
            }
          }
        }
    }

  const int ix = input.id, ik = kernel.id, io = t.next_id();
  return t.make({co, ho, wo}, std::move(out), {input, kernel},
                [ix, ik, io, ci, h, w, co, kk, stride, pad, ho, wo](Tape& t) {
    const auto& g = t.grad(io);
    const auto& xv = t.value(ix);
    const auto& kv = t.value(ik);
    const bool need_dx = t.requires_grad(ix);
    const bool need_dk = t.requires_grad(ik);
    std::vector<double>* dx = need_dx ? &t.grad(ix) : nullptr;
    std::vector<double>* dk = need_dk ? &t.grad(ik) : nullptr;
    for (int oc = 0; oc < co; ++oc)
      for (int ic = 0; ic < ci; ++ic) {
        const double* kp = &kv[(std::size_t(oc) * ci + ic) * kk * kk];
        const double* xc = &xv[std::size_t(ic) * h * w];
        const double* gc = &g[std::size_t(oc) * ho * wo];
        double* dxc = need_dx ? &(*dx)[std::size_t(ic) * h * w] : nullptr;
        for (int kr = 0; kr < kk; ++kr)
          for (int kc = 0; kc < kk; ++kc) {
            const double wt = kp[kr * kk + kc];
            const int lo = std::max(0, detail::div_ceil(pad - kc, stride));
            const int hi = std::min(wo, (w - 1 - kc + pad) / stride + 1);
            double acc = 0.0;
            for (int r = 0; r < ho; ++r) {
              const int ir = r * stride + kr - pad;
              if (ir < 0 || ir >= h) continue;
              const double* xrow = xc + std::size_t(ir) * w;
              const double* grow = gc + std::size_t(r) * wo;
              double* dxrow = need_dx ? dxc + std::size_t(ir) * w : nullptr;
              if (stride == 1) {
                const int off = kc - pad;
                if (need_dx)
                  for (int c = lo; c < hi; ++c) {
                    const double gg = grow[c];
                    acc += gg * xrow[c + off];
                    dxrow[c + off] += wt * gg;
                  }
                else
                  for (int c = lo; c < hi; ++c) acc += grow[c] * xrow[c + off];
              } else {
                if (need_dx)
                  for (int c = lo; c < hi; ++c) {
                    const double gg = grow[c];
                    const int icx = c * stride + kc - pad;
                    acc += gg * xrow[icx];
                    dxrow[icx] += wt * gg;
                  }
                else
                  for (int c = lo; c < hi; ++c) acc += grow[c] * xrow[c * stride + kc - pad];
              }
            }
            if (need_dk) (*dk)[(std::size_t(oc) * ci + ic) * kk * kk + kr * kk + kc] += acc;
          }
      }
  });
}

// y = W x, W [m,n], x [n].
inline Var matvec(Var wm, Var x) {
  Tape& t = *wm.tape;
  const Shape& ws = t.shape(wm);
  const Shape& xs = t.shape(x);
  if (ws.size() != 2 || xs.size() != 1 || ws[1] != xs[0])
    throw shape_error("matvec: incompatible shapes " + shape_str(ws) + " and " + shape_str(xs));
  const int m = ws[0], n = ws[1];
  const auto& wv = t.value(wm);
  const auto& xv = t.value(x);
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* row = &wv[std::size_t(i) * n];
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  const int iw = wm.id, ix = x.id, io = t.next_id();
  return t.make({m}, std::move(out), {wm, x}, [iw, ix, io, m, n](Tape& t) {
    const auto& g = t.grad(io);
    const auto& wv = t.value(iw);
    const auto& xv = t.value(ix);
    if (t.requires_grad(iw)) {
      auto& gw = t.grad(iw);
      for (int i = 0; i < m; ++i) {
        const double gi = g[i];
        double* grow = &gw[std::size_t(i) * n];
        for (int j = 0; j < n; ++j) grow[j] += gi * xv[j];
      }
    }
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      for (int i = 0; i < m; ++i) {
        const double gi = g[i];
        const double* row = &wv[std::size_t(i) * n];
        for (int j = 0; j < n; ++j) gx[j] += gi * row[j];
      }
    }
  });
}

// y = v^T M, v [n], M [n,c].
inline Var vecmat(Var v, Var m) {
  Tape& t = *v.tape;
  const Shape& vs = t.shape(v);
  const Shape& ms = t.shape(m);
  if (vs.size() != 1 || ms.size() != 2 || ms[0] != vs[0])
    throw shape_error("vecmat: incompatible shapes " + shape_str(vs) + " and " + shape_str(ms));
  const int n = ms[0], c = ms[1];
  const auto& vv = t.value(v);
  const auto& mv = t.value(m);
  std::vector<double> out(c, 0.0);
  for (int i = 0; i < n; ++i) {
    const double vi = vv[i];
    if (vi == 0.0) continue;
    const double* row = &mv[std::size_t(i) * c];
    for (int j = 0; j < c; ++j) out[j] += vi * row[j];
  }
  const int iv = v.id, im = m.id, io = t.next_id();
  return t.make({c}, std::move(out), {v, m}, [iv, im, io, n, c](Tape& t) {
    const auto& g = t.grad(io);
    const auto& vv = t.value(iv);
    const auto& mv = t.value(im);
    if (t.requires_grad(iv)) {
      auto& gv = t.grad(iv);
      for (int i = 0; i < n; ++i) {
        const double* row = &mv[std::size_t(i) * c];
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += g[j] * row[j];
        gv[i] += s;
      }
    }
    if (t.requires_grad(im)) {
      auto& gm = t.grad(im);
      for (int i = 0; i < n; ++i) {
        const double vi = vv[i];
        if (vi == 0.0) continue;  // contributes vi * g[j] = 0
        double* grow = &gm[std::size_t(i) * c];
        for (int j = 0; j < c; ++j) grow[j] += vi * g[j];
      }
    }
  });
}

inline Var softmax(Var x) {
  Tape& t = *x.tape;
  const Shape& xs = t.shape(x);
  if (xs.size() != 1) throw shape_error("softmax: expected vector, got " + shape_str(xs));
  const auto& xv = t.value(x);
  double m = xv[0];
  for (double v : xv) m = std::max(m, v);
  std::vector<double> out(xv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  const int ix = x.id, io = t.next_id();
  return t.make(xs, std::move(out), {x}, [ix, io](Tape& t) {
    const auto& g = t.grad(io);
    const auto& y = t.value(io);
    auto& gx = t.grad(ix);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
  });
}

// Mean-normalized log-sum-exp pooling of each channel of a [K,H,W] stack:
// (1/r) * log( (1/(H*W)) * sum exp(r * s) ), computed with a max shift.
inline Var lse_pool(Var x, double r) {
  Tape& t = *x.tape;
  const Shape& xs = t.shape(x);
  if (xs.size() != 3) throw shape_error("lse_pool: expected [K,H,W], got " + shape_str(xs));
  if (!(r > 0.0)) throw shape_error("lse_pool: sharpness r must be positive");
  const int k = xs[0];
  const std::size_t hw = std::size_t(xs[1]) * xs[2];
  const auto& xv = t.value(x);
  std::vector<double> out(k);
  for (int c = 0; c < k; ++c) {
    const double* p = &xv[c * hw];
    double m = p[0];
    for (std::size_t i = 0; i < hw; ++i) m = std::max(m, p[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += std::exp(r * (p[i] - m));
    out[c] = m + (std::log(s) - std::log(double(hw))) / r;
  }
  const int ix = x.id, io = t.next_id();
  return t.make({k}, std::move(out), {x}, [ix, io, k, hw, r](Tape& t) {
    const auto& g = t.grad(io);
    const auto& xv = t.value(ix);
    auto& gx = t.grad(ix);
    for (int c = 0; c < k; ++c) {
      const double* p = &xv[c * hw];
      double* gp = &gx[c * hw];
      double m = p[0];
      for (std::size_t i = 0; i < hw; ++i) m = std::max(m, p[i]);
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += std::exp(r * (p[i] - m));
      const double gc = g[c] / s;
      for (std::size_t i = 0; i < hw; ++i) gp[i] += gc * std::exp(r * (p[i] - m));
    }
  });
}

// [C,H,W] -> [C] channel means.
inline Var global_avg_pool(Var x) {
  Tape& t = *x.tape;
  const Shape& xs = t.shape(x);
  if (xs.size() != 3) throw shape_error("global_avg_pool: expected [C,H,W], got " + shape_str(xs));
  const int c = xs[0];
  const std::size_t hw = std::size_t(xs[1]) * xs[2];
  const auto& xv = t.value(x);
  std::vector<double> out(c, 0.0);
  for (int i = 0; i < c; ++i) {
    double s = 0.0;
    const double* p = &xv[i * hw];
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / double(hw);
  }
  const int ix = x.id, io = t.next_id();
  return t.make({c}, std::move(out), {x}, [ix, io, c, hw](Tape& t) {
    const auto& g = t.grad(io);
    auto& gx = t.grad(ix);
    for (int i = 0; i < c; ++i) {
      const double gi = g[i] / double(hw);
      double* gp = &gx[i * hw];
      for (std::size_t j = 0; j < hw; ++j) gp[j] += gi;
    }
  });
}

// Nearest-neighbour 2x upsampling of [C,H,W].
inline Var upsample2x(Var x) {
  Tape& t = *x.tape;
  const Shape& xs = t.shape(x);
  if (xs.size() != 3) throw shape_error("upsample2x: expected [C,H,W], got " + shape_str(xs));
  const int c = xs[0], h = xs[1], w = xs[2];
  const auto& xv = t.value(x);
  std::vector<double> out(std::size_t(c) * 4 * h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < 2 * h; ++r) {
      const double* src = &xv[(std::size_t(ch) * h + r / 2) * w];
      double* dst = &out[(std::size_t(ch) * 2 * h + r) * 2 * w];
      for (int cc = 0; cc < 2 * w; ++cc) dst[cc] = src[cc / 2];
    }
  const int ix = x.id, io = t.next_id();
  return t.make({c, 2 * h, 2 * w}, std::move(out), {x}, [ix, io, c, h, w](Tape& t) {
    const auto& g = t.grad(io);
    auto& gx = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < 2 * h; ++r) {
        const double* grow = &g[(std::size_t(ch) * 2 * h + r) * 2 * w];
        double* dst = &gx[(std::size_t(ch) * h + r / 2) * w];
        for (int cc = 0; cc < 2 * w; ++cc) dst[cc / 2] += grow[cc];
      }
  });
}

}  // namespace weakloc
