#pragma once

#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "weakloc/data.hpp"
#include "weakloc/model.hpp"
#include "weakloc/sampling.hpp"

namespace weakloc {

// Label balancing of the losses: beta_p(k) = 1 - P_k/|D|, beta_n(k) = P_k/|D|.
struct ClassWeights {
  std::vector<double> beta_p, beta_n;

  static ClassWeights uniform(int k) {
    return ClassWeights{std::vector<double>(k, 0.5), std::vector<double>(k, 0.5)};
  }
};

inline ClassWeights compute_class_weights(const std::vector<SampleRecord>& ds) {
  if (ds.empty()) throw data_error("class weights: dataset is empty");
  const int k = int(ds[0].labels.size());
  std::vector<double> pos(k, 0.0);
  for (const auto& rec : ds)
    for (int c = 0; c < k; ++c) pos[c] += rec.labels[c];
  ClassWeights w;
  w.beta_p.resize(k);
  w.beta_n.resize(k);
  for (int c = 0; c < k; ++c) {
    const double frac = pos[c] / double(ds.size());
    w.beta_p[c] = 1.0 - frac;
    w.beta_n[c] = frac;
  }
  return w;
}

// Class-balanced binary cross entropy on logits, the shared form of the
// classification and detection losses:
//   -sum_k beta_p(k) y_k log s(x_k) + beta_n(k) (1-y_k) log(1 - s(x_k)).
inline Var weighted_bce(Var logit, const std::vector<int>& y, const ClassWeights& w) {
  Tape& t = *logit.tape;
  const int k = int(t.value(logit).size());
  if (int(y.size()) != k || int(w.beta_p.size()) != k)
    throw shape_error("weighted_bce: label/weight length mismatch");
  std::vector<double> wpos(k), wneg(k);
  for (int c = 0; c < k; ++c) {
    wpos[c] = w.beta_p[c] * y[c];
    wneg[c] = w.beta_n[c] * (1 - y[c]);
  }
  Var pos = vsum(mul(t.constant(Shape{k}, std::move(wpos)), log_logistic(logit)));
  Var negt = vsum(mul(t.constant(Shape{k}, std::move(wneg)), log_logistic(neg(logit))));
  return neg(add(pos, negt));
}

inline Var loss_cls(Var y_logit, const std::vector<int>& y, const ClassWeights& w) {
  return weighted_bce(y_logit, y, w);
}

inline Var loss_rpn(Var z_logit, const std::vector<int>& y, const ClassWeights& w) {
  return weighted_bce(z_logit, y, w);
}

// ---- augmentation ----

struct AugmentRanges {
  double zoom = 0.1;         // scale drawn from [0, zoom]
  double translate = 50.0;   // pixels, each axis drawn from [-translate, translate]
  double rotate_deg = 10.0;  // drawn from [-rotate_deg, rotate_deg]
  bool flip = true;          // random horizontal flip
};

struct AugmentParams {
  double zoom = 0.0, tx = 0.0, ty = 0.0, rot_rad = 0.0;
  bool flip = false;
};

// Draws in a fixed order so the stream is stable across configurations.
inline AugmentParams draw_augment(Rng& rng, const AugmentRanges& r) {
  AugmentParams p;
  p.zoom = uniform_in(rng, 0.0, r.zoom);
  p.tx = uniform_in(rng, -r.translate, r.translate);
  p.ty = uniform_in(rng, -r.translate, r.translate);
  p.rot_rad = uniform_in(rng, -r.rotate_deg, r.rotate_deg) * (3.14159265358979323846 / 180.0);
  const double u = uniform01(rng);
  p.flip = r.flip && u < 0.5;
  return p;
}

// Horizontal flip is an exact mirror; zoom/rotation/translation compose into
// one inverse-mapped bilinear warp with zero fill outside the canvas. The
// all-zero parameter set is an exact identity.
inline Tensor apply_augment(const Tensor& img, const AugmentParams& p) {
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  Tensor flipped = img;
  if (p.flip) {
    for (int ch = 0; ch < c; ++ch)
      for (int r = 0; r < h; ++r) {
        double* row = &flipped.data[(std::size_t(ch) * h + r) * w];
        for (int cc = 0; cc < w / 2; ++cc) std::swap(row[cc], row[w - 1 - cc]);
      }
  }
  if (p.zoom == 0.0 && p.tx == 0.0 && p.ty == 0.0 && p.rot_rad == 0.0) return flipped;

  const double s = 1.0 + p.zoom;
  const double cosr = std::cos(p.rot_rad), sinr = std::sin(p.rot_rad);
  const double cx = 0.5 * w, cy = 0.5 * h;
  Tensor out({c, h, w});
  for (int r = 0; r < h; ++r)
    for (int cc = 0; cc < w; ++cc) {
      // invert dst = R * s * (src - ctr) + ctr + t
      const double dx = (cc + 0.5) - cx - p.tx;
      const double dy = (r + 0.5) - cy - p.ty;
      const double sx = (cosr * dx + sinr * dy) / s + cx;
      const double sy = (-sinr * dx + cosr * dy) / s + cy;
      if (sx < 0.0 || sx > double(w) || sy < 0.0 || sy > double(h)) continue;  // zero fill
      const auto tap = detail::bilinear_tap(h, w, sy, sx);
      for (int ch = 0; ch < c; ++ch)
        out.data[(std::size_t(ch) * h + r) * w + cc] =
            detail::tap_value(tap, &flipped.data[std::size_t(ch) * h * w], w);
    }
  return out;
}

inline Tensor augment(const Tensor& img, Rng& rng, const AugmentRanges& ranges) {
  return apply_augment(img, draw_augment(rng, ranges));
}

// ---- optimizer ----

// Adam with decoupled weight decay; beta1 is the paper's momentum.
struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-3;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long t = 0;

  void reset(const ModelParams& params) {
    m.clear();
    v.clear();
    for (const auto& [name, tensor] : params.items) {
      m.emplace_back(tensor.shape);
      v.emplace_back(tensor.shape);
    }
    t = 0;
  }
};

inline void adam_step(ModelParams& params, const std::map<std::string, Tensor>& grads,
                      AdamState& state, double lr, const AdamConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    auto& [name, p] = params.items[i];
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const auto& g = it->second.data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.data[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data[j]);
    }
  }
}

// ---- 3-stage training driver ----

struct TrainConfig {
  int steps_stage1 = 250, steps_stage2 = 250, steps_stage3 = 300;
  double lr_stage12 = 1e-3, lr_stage3 = 3e-4;
  AdamConfig adam;
  int batch_size = 8;
  std::uint64_t seed = 1234;
  double tau_start = 1.0, tau_end = 0.001;
  bool anneal_reset = false;  // continue one schedule across stages 2-3 by default
  bool freeze_cls_stage2 = true;
  bool uniform_class_weights = false;
  bool augment = true;
  AugmentRanges aug;
  int threads = 1;
};

struct TrainLogRow {
  int step = 0;   // 1-based global step
  int stage = 0;  // 1..3
  double tau = 0.0;
  double loss_cls = 0.0;  // NaN when the stage does not compute it
  double loss_rpn = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<ModelParams> stage_checkpoints;  // snapshot at the end of each completed stage
  std::vector<TrainLogRow> log;
  bool diverged = false;
  int diverged_step = -1;
  Diagnostics diag;
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open " + path + " for writing");
  os << "step,stage,tau,loss_cls,loss_rpn\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.stage << ',' << fmt_double(r.tau) << ',' << fmt_double(r.loss_cls)
       << ',' << fmt_double(r.loss_rpn) << '\n';
}

namespace detail {

struct SampleGrads {
  std::map<std::string, Tensor> grads;
  double loss_cls = std::numeric_limits<double>::quiet_NaN();
  double loss_rpn = std::numeric_limits<double>::quiet_NaN();
  long degenerate_boxes = 0;
};

inline SampleGrads run_train_sample(const SampleRecord& rec, const ModelParams& params,
                                    const ModelConfig& mc, const AnchorSet& anchors,
                                    const ClassWeights& weights, const TrainConfig& tc, int stage,
                                    double tau, std::uint64_t sample_seed) {
  Tensor img = rec.image3();
  if (tc.augment) {
    Rng arng(derive_seed(sample_seed, 1));
    img = augment(img, arng, tc.aug);
  }
  Rng grng(derive_seed(sample_seed, 2));

  auto trainable = [&](const std::string& name) {
    const bool cls_branch = name.starts_with("backbone.") || name.starts_with("sal.");
    if (stage == 1) return cls_branch;
    if (stage == 2) return !cls_branch || (!tc.freeze_cls_stage2 && name.starts_with("backbone."));
    return true;
  };

  Tape tape;
  BoundParams bp = bind_params(tape, params, trainable);
  Var image3 = tape.constant(img);
  Diagnostics diag;
  SampleGrads out;
  Var loss{};
  if (stage == 1) {
    ClsForward cls = forward_cls(bp, image3, mc);
    loss = loss_cls(cls.y_logit, rec.labels, weights);
    out.loss_cls = tape.value(loss)[0];
  } else if (stage == 2) {
    Var x_fpn = forward_fpn(bp, image3, mc);
    DetTrainForward det = forward_det_train(bp, image3, x_fpn, anchors, mc, tau, grng, &diag);
    loss = loss_rpn(det.z_logit, rec.labels, weights);
    out.loss_rpn = tape.value(loss)[0];
  } else {
    ClsForward cls = forward_cls(bp, image3, mc);
    DetTrainForward det = forward_det_train(bp, image3, cls.x_fpn, anchors, mc, tau, grng, &diag);
    Var lc = loss_cls(cls.y_logit, rec.labels, weights);
    Var lr = loss_rpn(det.z_logit, rec.labels, weights);
    out.loss_cls = tape.value(lc)[0];
    out.loss_rpn = tape.value(lr)[0];
    loss = add(lc, lr);
  }
  tape.backward(loss);
  for (const auto& [name, var] : bp.vars)
    if (tape.requires_grad(var) && tape.has_grad(var)) out.grads.emplace(name, tape.grad_tensor(var));
  out.degenerate_boxes = diag.degenerate_boxes;
  return out;
}

}  // namespace detail

// Stage 1 trains the classification branch, stage 2 the detection branch
// (classification frozen unless configured otherwise), stage 3 both jointly;
// tau anneals across stages 2-3. Loss curves depend only on the seed, not on
// the thread count, because every sample derives its own rng streams.
// `init_params` resumes from an existing checkpoint instead of a fresh init.
inline TrainResult train(const std::vector<SampleRecord>& ds, const ModelConfig& mc,
                         const TrainConfig& tc, const ModelParams* init_params = nullptr) {
  if (ds.empty()) throw data_error("train: dataset is empty");
  mc.validate();
  if (int(ds[0].labels.size()) != mc.num_classes)
    throw config_error("train: dataset has " + std::to_string(ds[0].labels.size()) +
                       " classes, model expects " + std::to_string(mc.num_classes));
  const AnchorSet anchors = make_anchors(mc);
  Rng init_rng(derive_seed(tc.seed, 0));
  TrainResult res;
  res.params = init_params ? *init_params : ModelParams::init(mc, init_rng);
  const ClassWeights weights =
      tc.uniform_class_weights ? ClassWeights::uniform(mc.num_classes) : compute_class_weights(ds);

  const int s1 = tc.steps_stage1, s2 = tc.steps_stage2, s3 = tc.steps_stage3;
  const int total = s1 + s2 + s3;
  // the first annealed step uses tau_start and the last one tau_end exactly
  const TemperatureSchedule sched_joint(tc.tau_start, tc.tau_end, std::max(1, s2 + s3 - 1));
  const TemperatureSchedule sched_s2(tc.tau_start, tc.tau_end, std::max(1, s2 - 1));
  const TemperatureSchedule sched_s3(tc.tau_start, tc.tau_end, std::max(1, s3 - 1));

  AdamState adam;
  adam.reset(res.params);
  int prev_stage = 1;

  // deterministic epoch shuffling
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      order.resize(ds.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng srng(derive_seed(tc.seed, 0xE90C + epoch));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::size_t(uniform01(srng) * double(i))]);
      ++epoch;
      cursor = 0;
    }
    return order[cursor++];
  };

  ModelParams last_good = res.params;
  for (int g = 0; g < total; ++g) {
    const int stage = g < s1 ? 1 : (g < s1 + s2 ? 2 : 3);
    if (stage != prev_stage) {
      adam.reset(res.params);
      prev_stage = stage;
    }
    double tau = tc.tau_start;
    if (stage == 2) tau = tau_at(tc.anneal_reset ? sched_s2 : sched_joint, g - s1);
    if (stage == 3)
      tau = tc.anneal_reset ? tau_at(sched_s3, g - s1 - s2) : tau_at(sched_joint, g - s1);
    const double lr = stage == 3 ? tc.lr_stage3 : tc.lr_stage12;

    const int b = tc.batch_size;
    std::vector<std::size_t> batch(b);
    std::vector<std::uint64_t> seeds(b);
    for (int i = 0; i < b; ++i) {
      batch[i] = next_index();
      seeds[i] = derive_seed(tc.seed, 0x5A000000ull + std::uint64_t(g) * b + i);
    }

    std::vector<detail::SampleGrads> results(b);
    if (tc.threads > 1) {
      std::vector<std::future<detail::SampleGrads>> futs;
      for (int i = 0; i < b; ++i)
        futs.push_back(std::async(std::launch::async, [&, i] {
          return detail::run_train_sample(ds[batch[i]], res.params, mc, anchors, weights, tc,
                                          stage, tau, seeds[i]);
        }));
      for (int i = 0; i < b; ++i) results[i] = futs[i].get();
    } else {
      for (int i = 0; i < b; ++i)
        results[i] = detail::run_train_sample(ds[batch[i]], res.params, mc, anchors, weights, tc,
                                              stage, tau, seeds[i]);
    }

    // fixed-order reduction keeps results identical for any thread count
    std::map<std::string, Tensor> acc;
    double lc = 0.0, lrp = 0.0;
    for (int i = 0; i < b; ++i) {
      for (auto& [name, gt] : results[i].grads) {
        auto [it, inserted] = acc.try_emplace(name, gt.shape);
        for (std::size_t j = 0; j < gt.data.size(); ++j) it->second.data[j] += gt.data[j] / b;
      }
      lc += results[i].loss_cls;   // NaN when the stage skips it
      lrp += results[i].loss_rpn;
      res.diag.degenerate_boxes += results[i].degenerate_boxes;
    }
    const double mean_lc = lc / b;
    const double mean_lr = lrp / b;
    const double active = stage == 1 ? mean_lc : (stage == 2 ? mean_lr : mean_lc + mean_lr);

    if (!std::isfinite(active)) {
      res.params = last_good;
      res.diverged = true;
      res.diverged_step = g + 1;
      res.log.push_back({g + 1, stage, tau, mean_lc, mean_lr});
      break;
    }
    last_good = res.params;
    adam_step(res.params, acc, adam, lr, tc.adam);
    res.log.push_back({g + 1, stage, tau, mean_lc, mean_lr});
    if (g + 1 == s1 || g + 1 == s1 + s2 || g + 1 == total)
      res.stage_checkpoints.push_back(res.params);
  }
  return res;
}

}  // namespace weakloc
