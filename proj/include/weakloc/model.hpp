#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "weakloc/checkpoint.hpp"
#include "weakloc/nn.hpp"
#include "weakloc/regions.hpp"
#include "weakloc/saliency.hpp"
#include "weakloc/sampling.hpp"
#include "weakloc/tape.hpp"

namespace weakloc {

// 2x2 mean pooling; this is how the backbone downsamples, since strided odd
// kernels cannot halve an even extent exactly.
inline Var avg_pool2x2(Var x) {
  Tape& t = *x.tape;
  const Shape& xs = t.shape(x);
  if (xs.size() != 3) throw shape_error("avg_pool2x2: expected [C,H,W], got " + shape_str(xs));
  const int c = xs[0], h = xs[1], w = xs[2];
  if (h % 2 || w % 2) throw shape_error("avg_pool2x2: extent must be even, got " + shape_str(xs));
  const int ho = h / 2, wo = w / 2;
  const auto& xv = t.value(x);
  std::vector<double> out(std::size_t(c) * ho * wo);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < ho; ++r) {
      const double* r0 = &xv[(std::size_t(ch) * h + 2 * r) * w];
      const double* r1 = r0 + w;
      double* op = &out[(std::size_t(ch) * ho + r) * wo];
      for (int cc = 0; cc < wo; ++cc)
        op[cc] = 0.25 * (r0[2 * cc] + r0[2 * cc + 1] + r1[2 * cc] + r1[2 * cc + 1]);
    }
  const int ix = x.id, io = t.next_id();
  return t.make({c, ho, wo}, std::move(out), {x}, [ix, io, c, h, w, ho, wo](Tape& t) {
    const auto& g = t.grad(io);
    auto& gx = t.grad(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < ho; ++r) {
        const double* gp = &g[(std::size_t(ch) * ho + r) * wo];
        double* r0 = &gx[(std::size_t(ch) * h + 2 * r) * w];
        double* r1 = r0 + w;
        for (int cc = 0; cc < wo; ++cc) {
          const double q = 0.25 * gp[cc];
          r0[2 * cc] += q;
          r0[2 * cc + 1] += q;
          r1[2 * cc] += q;
          r1[2 * cc + 1] += q;
        }
      }
  });
}

struct ModelConfig {
  int image_size = 128;
  int num_classes = 4;
  // backbone: three pool+conv stages, one lateral top-down merge at 1/4 scale
  int c1 = 8, c2 = 16, c3 = 32;
  int lateral_channels = 16;
  int q_channels = 32;  // x_FPN depth
  int sal_hidden = 8;
  double lse_r = 5.0;
  double leaky_slope = 0.1;
  // detection
  int roi_size = 4;
  int det_hidden = 48;
  double delta_scale = 0.15;  // damps the box regressor so refinement stays near the anchors
  int crop_size = 64;
  std::array<int, 4> crop_channels{8, 12, 12, 12};
  std::vector<int> anchor_sizes{32, 64, 96};
  std::vector<int> anchor_strides{16, 32, 48};

  int map_size() const { return image_size / 4; }
  void validate() const {
    if (image_size < 16 || image_size % 8 != 0)
      throw config_error("model: image_size must be a multiple of 8 and >= 16");
    if (num_classes < 1) throw config_error("model: num_classes must be >= 1");
    if (crop_size < 16 || crop_size % 16 != 0)
      throw config_error("model: crop_size must be a multiple of 16");
    if (roi_size < 1) throw config_error("model: roi_size must be >= 1");
  }
};

inline AnchorSet make_anchors(const ModelConfig& cfg) {
  return generate_anchors(cfg.image_size, cfg.image_size, cfg.anchor_sizes, cfg.anchor_strides);
}

// Named parameter tensors in a fixed order. Prefixes group them for staged
// freezing: backbone., sal., det., crop.
struct ModelParams {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw error("unknown parameter '" + name + "'");
  }
  const Tensor& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }

  std::vector<std::pair<std::string, const Tensor*>> entries() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(items.size());
    for (const auto& [n, t] : items) out.emplace_back(n, &t);
    return out;
  }

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    auto conv = [&](const std::string& name, int co, int ci, int k, double ws = -1.0) {
      const double stddev = ws > 0 ? ws : std::sqrt(2.0 / double(ci * k * k));
      p.items.emplace_back(name + ".w", randn({co, ci, k, k}, rng, stddev));
      p.items.emplace_back(name + ".b", Tensor({co}));
    };
    auto dense = [&](const std::string& name, int m, int n, double ws = -1.0) {
      const double stddev = ws > 0 ? ws : std::sqrt(2.0 / double(n));
      p.items.emplace_back(name + ".w", randn({m, n}, rng, stddev));
      p.items.emplace_back(name + ".b", Tensor({m}));
    };
    const int k = cfg.num_classes;
    conv("backbone.conv1", cfg.c1, 3, 3);
    conv("backbone.conv2", cfg.c2, cfg.c1, 3);
    conv("backbone.conv3", cfg.c3, cfg.c2, 3);
    conv("backbone.lat", cfg.lateral_channels, cfg.c2, 1);
    conv("backbone.td", cfg.lateral_channels, cfg.c3, 1);
    conv("backbone.merge", cfg.q_channels, cfg.lateral_channels, 3);
    conv("sal.conv1", cfg.sal_hidden, cfg.q_channels, 3);
    conv("sal.conv2", k, cfg.sal_hidden, 1);
    dense("det.trunk", cfg.det_hidden, cfg.q_channels * cfg.roi_size * cfg.roi_size);
    // small heads keep initial confidences near uniform and boxes near anchors
    dense("det.conf", k, cfg.det_hidden, 0.01);
    dense("det.delta", 4 * k, cfg.det_hidden, 0.001);
    const auto& cc = cfg.crop_channels;
    conv("crop.conv1", cc[0], 3, 3);
    conv("crop.conv2", cc[1], cc[0], 3);
    conv("crop.conv3", cc[2], cc[1], 3);
    conv("crop.conv4", cc[3], cc[2], 3);
    dense("crop.fc", k, cc[3]);
    return p;
  }

  // Replaces values from a checkpoint; every name must match in shape.
  void load(const std::map<std::string, Tensor>& ckpt) {
    for (auto& [name, tensor] : items) {
      const auto it = ckpt.find(name);
      if (it == ckpt.end()) throw data_error("checkpoint is missing parameter '" + name + "'");
      if (it->second.shape != tensor.shape)
        throw data_error("checkpoint shape mismatch for '" + name + "': expected " +
                         shape_str(tensor.shape) + ", found " + shape_str(it->second.shape));
      tensor = it->second;
    }
  }
};

inline void save_params(const std::string& path, const ModelParams& params) {
  save_checkpoint(path, params.entries());
}

inline ModelParams load_params(const std::string& path, const ModelConfig& cfg) {
  Rng rng(0);
  ModelParams p = ModelParams::init(cfg, rng);
  p.load(load_checkpoint(path));
  return p;
}

// Parameters registered on a tape; `trainable` decides which ones record
// gradients.
struct BoundParams {
  std::map<std::string, Var> vars;
  Var operator()(const std::string& name) const {
    const auto it = vars.find(name);
    if (it == vars.end()) throw error("unbound parameter '" + name + "'");
    return it->second;
  }
};

inline BoundParams bind_params(
    Tape& tape, const ModelParams& params,
    const std::function<bool(const std::string&)>& trainable = {}) {
  BoundParams bp;
  for (const auto& [name, tensor] : params.items)
    bp.vars.emplace(name, tape.input(tensor, trainable ? trainable(name) : false));
  return bp;
}

namespace detail {
inline Var conv_block(Var x, Var w, Var b, int stride, int pad, double slope) {
  return leaky_relu(add(conv2d(x, w, stride, pad), b), slope);
}
}  // namespace detail

// Backbone of Fig-1 shape at toy scale: three pool+conv stages and one
// lateral/top-down merge producing Q maps at 1/4 resolution.
inline Var forward_fpn(const BoundParams& p, Var image3, const ModelConfig& cfg) {
  const double s = cfg.leaky_slope;
  Var c1 = detail::conv_block(avg_pool2x2(image3), p("backbone.conv1.w"), p("backbone.conv1.b"),
                              1, 1, s);
  Var c2 = detail::conv_block(avg_pool2x2(c1), p("backbone.conv2.w"), p("backbone.conv2.b"), 1, 1,
                              s);
  Var c3 = detail::conv_block(avg_pool2x2(c2), p("backbone.conv3.w"), p("backbone.conv3.b"), 1, 1,
                              s);
  Var lat = add(conv2d(c2, p("backbone.lat.w"), 1, 0), p("backbone.lat.b"));
  Var td = upsample2x(add(conv2d(c3, p("backbone.td.w"), 1, 0), p("backbone.td.b")));
  Var merged = leaky_relu(add(lat, td), s);
  return detail::conv_block(merged, p("backbone.merge.w"), p("backbone.merge.b"), 1, 1, s);
}

struct ClsForward {
  Var x_fpn;    // [Q, H/4, W/4]
  Var x_s;      // [K, H/4, W/4]
  Var y_logit;  // [K]
};

inline ClsForward forward_cls(const BoundParams& p, Var image3, const ModelConfig& cfg) {
  ClsForward out;
  out.x_fpn = forward_fpn(p, image3, cfg);
  Var hs = detail::conv_block(out.x_fpn, p("sal.conv1.w"), p("sal.conv1.b"), 1, 1,
                              cfg.leaky_slope);
  out.x_s = add(conv2d(hs, p("sal.conv2.w"), 1, 0), p("sal.conv2.b"));
  out.y_logit = lse_pool(out.x_s, cfg.lse_r);
  return out;
}

inline Var forward_crop_classifier(const BoundParams& p, Var crop, const ModelConfig& cfg) {
  const double s = cfg.leaky_slope;
  Var h1 = detail::conv_block(avg_pool2x2(crop), p("crop.conv1.w"), p("crop.conv1.b"), 1, 1, s);
  Var h2 = detail::conv_block(avg_pool2x2(h1), p("crop.conv2.w"), p("crop.conv2.b"), 1, 1, s);
  Var h3 = detail::conv_block(avg_pool2x2(h2), p("crop.conv3.w"), p("crop.conv3.b"), 1, 1, s);
  Var h4 = detail::conv_block(avg_pool2x2(h3), p("crop.conv4.w"), p("crop.conv4.b"), 1, 1, s);
  return add(matvec(p("crop.fc.w"), global_avg_pool(h4)), p("crop.fc.b"));
}

namespace detail {

struct DetHeads {
  Var conf;    // [N, K] confidence logits
  Var deltas;  // [N, 4K]
};

inline DetHeads forward_det_heads(const BoundParams& p, Var x_fpn, const AnchorSet& anchors,
                                  const ModelConfig& cfg, Diagnostics* diag) {
  const double s = cfg.leaky_slope;
  std::vector<Var> conf_rows, delta_rows;
  conf_rows.reserve(anchors.anchors.size());
  delta_rows.reserve(anchors.anchors.size());
  for (const Box& a : anchors.anchors) {
    Var f = roi_align(x_fpn, a, cfg.roi_size, cfg.roi_size, 0.25, diag);
    Var h = leaky_relu(add(matvec(p("det.trunk.w"), flatten(f)), p("det.trunk.b")), s);
    conf_rows.push_back(add(matvec(p("det.conf.w"), h), p("det.conf.b")));
    delta_rows.push_back(add(matvec(p("det.delta.w"), h), p("det.delta.b")));
  }
  return DetHeads{stack_rows(conf_rows), stack_rows(delta_rows)};
}

}  // namespace detail

struct DetTrainForward {
  Var z_logit;                     // [K]
  std::vector<int> selected;      // selected anchor index per class
  std::vector<Box> selected_box;  // refined box per class
};

// Training path: per class, ST Gumbel-Softmax picks one proposal from the
// confidence logits, its refined box crops the image and the crop classifier
// scores it. Gradients reach the confidence head through the ST surrogate and
// the delta head through the crop coordinates.
inline DetTrainForward forward_det_train(const BoundParams& p, Var image3, Var x_fpn,
                                         const AnchorSet& anchors, const ModelConfig& cfg,
                                         double tau, Rng& rng, Diagnostics* diag = nullptr) {
  Tape& t = *image3.tape;
  const auto heads = detail::forward_det_heads(p, x_fpn, anchors, cfg, diag);
  const int k = cfg.num_classes;
  DetTrainForward out;
  std::vector<Var> z_parts;
  for (int c = 0; c < k; ++c) {
    Var logits = gather_col(heads.conf, c);
    Var soft = gumbel_softmax(logits, tau, rng);
    CategoricalSample st = straight_through(soft);
    Var boxes = refine_boxes(anchors.anchors,
                             scale(gather_cols(heads.deltas, 4 * c, 4), cfg.delta_scale),
                             cfg.image_size, cfg.image_size);
    Var sel = vecmat(st.hard, boxes);
    Var crop = crop_resize(image3, sel, cfg.crop_size, cfg.crop_size, diag);
    Var zvec = forward_crop_classifier(p, crop, cfg);
    z_parts.push_back(take(zvec, c));
    out.selected.push_back(st.index);
    const auto& bv = t.value(sel);
    out.selected_box.push_back(Box{bv[0], bv[1], bv[2], bv[3]});
  }
  out.z_logit = concat(z_parts);
  return out;
}

// Inference path: no sampling; every anchor contributes a refined proposal
// with its logistic confidence.
inline std::vector<RefinedProposal> forward_det_infer(const BoundParams& p, Var x_fpn,
                                                      const AnchorSet& anchors,
                                                      const ModelConfig& cfg,
                                                      Diagnostics* diag = nullptr) {
  Tape& t = *x_fpn.tape;
  const auto heads = detail::forward_det_heads(p, x_fpn, anchors, cfg, diag);
  const auto& cv = t.value(heads.conf);
  const auto& dv = t.value(heads.deltas);
  const int n = int(anchors.anchors.size());
  const int k = cfg.num_classes;
  std::vector<RefinedProposal> props;
  props.reserve(std::size_t(n) * k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      RefinedProposal rp;
      rp.anchor_index = i;
      rp.class_index = c;
      rp.confidence = sigmoid(cv[std::size_t(i) * k + c]);
      const double* d = &dv[std::size_t(i) * 4 * k + 4 * c];
      const double s = cfg.delta_scale;
      rp.box = apply_deltas(anchors.anchors[i], {s * d[0], s * d[1], s * d[2], s * d[3]},
                            cfg.image_size, cfg.image_size);
      props.push_back(rp);
    }
  return props;
}

}  // namespace weakloc
