#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakloc/data.hpp"
#include "weakloc/regions.hpp"
#include "weakloc/saliency.hpp"

namespace weakloc {

// Mann-Whitney U / (P*N) with ties counted 0.5, computed via mid-ranks.
// Absent when the labels are all one class.
inline std::optional<double> auc(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw shape_error("auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const std::size_t negc = n - pos;
  if (pos == 0 || negc == 0) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid_rank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[idx[t]]) rank_sum_pos += mid_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * double(pos) * double(pos + 1);
  return u / (double(pos) * double(negc));
}

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = ix * iy;
  // areas from the same extent differences as the intersection, so identical
  // boxes give exactly 1
  const double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0());
  const double area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Box-interior indicator at map resolution, pixel-center-inside semantics.
inline std::vector<char> rasterize_box(const Box& b, int h, int w, double downscale = 4.0) {
  std::vector<char> mask(std::size_t(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    const double py = (r + 0.5) * downscale;
    if (py < b.y0() || py >= b.y1()) continue;
    for (int c = 0; c < w; ++c) {
      const double px = (c + 0.5) * downscale;
      if (px >= b.x0() && px < b.x1()) mask[std::size_t(r) * w + c] = 1;
    }
  }
  return mask;
}

// Continuous Dice between an un-binarised saliency channel in [0,1] and the
// rasterized ground-truth box: 2*sum(s*m) / (sum(s) + sum(m)).
inline std::optional<double> cdice(const SaliencyStack& s, int channel, const Box& gt,
                                   double downscale = 4.0) {
  const auto mask = rasterize_box(gt, s.h, s.w, downscale);
  const double* plane = s.channel(channel);
  double inter = 0.0, sum_s = 0.0, sum_m = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    sum_s += plane[i];
    sum_m += mask[i];
    if (mask[i]) inter += plane[i];
  }
  if (sum_m == 0.0) return std::nullopt;  // empty ground truth at this resolution
  return 2.0 * inter / (sum_s + sum_m);
}

// Fraction of IoU values >= kappa.
inline std::optional<double> t_iou(const std::vector<double>& ious, double kappa) {
  if (ious.empty()) return std::nullopt;
  std::size_t hit = 0;
  for (double v : ious) hit += v >= kappa ? 1 : 0;
  return double(hit) / double(ious.size());
}

struct Prediction {
  std::string id;
  std::vector<double> scores;             // per-class classification scores
  std::vector<std::optional<Box>> boxes;  // final per-class boxes
  SaliencyStack map;                      // normalized map used for cDice
};

struct MetricsReport {
  int num_samples = 0;
  int num_classes = 0;
  std::vector<std::optional<double>> auc_per_class;
  std::optional<double> auc_mean;
  std::vector<int> loc_counts;  // annotated (sample, class) pairs per class
  std::vector<std::optional<double>> iou_per_class;
  std::optional<double> iou_mean;
  std::vector<std::optional<double>> cdice_per_class;
  std::optional<double> cdice_mean;
  std::vector<double> kappas;
  std::vector<std::vector<std::optional<double>>> t_iou_per_class;  // [kappa][class]
  std::vector<std::optional<double>> t_iou_mean;                    // [kappa]
};

namespace detail {
inline std::optional<double> mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / n;
}
}  // namespace detail

// Classification metrics over all samples; localization metrics only over
// (sample, class) pairs whose ground-truth box is annotated. A missing
// predicted box scores IoU 0; cDice always uses the raw map.
inline MetricsReport evaluate(const std::vector<Prediction>& preds,
                              const std::vector<SampleRecord>& dataset,
                              const std::vector<double>& kappas = {0.3, 0.5, 0.6}) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) by_id[p.id] = &p;
  std::vector<std::string> unknown, missing;
  std::set<std::string> ds_ids;
  for (const auto& rec : dataset) {
    ds_ids.insert(rec.id);
    if (!by_id.count(rec.id)) missing.push_back(rec.id);
  }
  for (const auto& p : preds)
    if (!ds_ids.count(p.id)) unknown.push_back(p.id);
  if (!unknown.empty() || !missing.empty()) {
    std::string msg = "evaluate: prediction ids do not match dataset ids;";
    auto list = [](const std::vector<std::string>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size() && i < 10; ++i) s += (i ? ", " : " ") + v[i];
      if (v.size() > 10) s += ", ...";
      return s;
    };
    if (!unknown.empty()) msg += " unknown:" + list(unknown) + ";";
    if (!missing.empty()) msg += " missing:" + list(missing);
    throw data_error(msg);
  }

  const int k = dataset.empty() ? 0 : int(dataset[0].labels.size());
  MetricsReport rep;
  rep.num_samples = int(dataset.size());
  rep.num_classes = k;
  rep.kappas = kappas;

  for (int c = 0; c < k; ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& rec : dataset) {
      const Prediction& p = *by_id.at(rec.id);
      if (int(p.scores.size()) != k)
        throw data_error("evaluate: prediction '" + p.id + "' has " +
                         std::to_string(p.scores.size()) + " scores, expected " +
                         std::to_string(k));
      scores.push_back(p.scores[c]);
      labels.push_back(rec.labels[c]);
    }
    rep.auc_per_class.push_back(auc(scores, labels));
  }
  rep.auc_mean = detail::mean_present(rep.auc_per_class);

  std::vector<std::vector<double>> ious(k);
  std::vector<std::vector<double>> dices(k);
  for (const auto& rec : dataset) {
    const Prediction& p = *by_id.at(rec.id);
    for (int c = 0; c < k; ++c) {
      if (!rec.boxes[c]) continue;
      const double i = p.boxes[c] ? iou(*p.boxes[c], *rec.boxes[c]) : 0.0;
      ious[c].push_back(i);
      if (auto d = cdice(p.map, c, *rec.boxes[c])) dices[c].push_back(*d);
    }
  }
  rep.loc_counts.resize(k);
  for (int c = 0; c < k; ++c) {
    rep.loc_counts[c] = int(ious[c].size());
    if (ious[c].empty()) {
      rep.iou_per_class.emplace_back(std::nullopt);
      rep.cdice_per_class.emplace_back(std::nullopt);
    } else {
      rep.iou_per_class.emplace_back(std::accumulate(ious[c].begin(), ious[c].end(), 0.0) /
                                     double(ious[c].size()));
      rep.cdice_per_class.emplace_back(
          dices[c].empty() ? std::optional<double>()
                           : std::optional<double>(std::accumulate(dices[c].begin(),
                                                                   dices[c].end(), 0.0) /
                                                   double(dices[c].size())));
    }
  }
  rep.iou_mean = detail::mean_present(rep.iou_per_class);
  rep.cdice_mean = detail::mean_present(rep.cdice_per_class);

  for (double kappa : kappas) {
    std::vector<std::optional<double>> per_class;
    for (int c = 0; c < k; ++c) per_class.push_back(t_iou(ious[c], kappa));
    rep.t_iou_mean.push_back(detail::mean_present(per_class));
    rep.t_iou_per_class.push_back(std::move(per_class));
  }
  return rep;
}

// ---- report serialization ----

inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
  auto opt_arr = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v)
      x ? a.push_back(*x) : a.push_back(nullptr);
    return a;
  };
  auto opt_val = [](const std::optional<double>& x) {
    return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["num_samples"] = rep.num_samples;
  j["num_classes"] = rep.num_classes;
  j["auc"] = {{"per_class", opt_arr(rep.auc_per_class)}, {"mean", opt_val(rep.auc_mean)}};
  j["iou"] = {{"per_class", opt_arr(rep.iou_per_class)},
              {"mean", opt_val(rep.iou_mean)},
              {"counts", rep.loc_counts}};
  j["cdice"] = {{"per_class", opt_arr(rep.cdice_per_class)}, {"mean", opt_val(rep.cdice_mean)}};
  nlohmann::json tj = nlohmann::json::object();
  for (std::size_t i = 0; i < rep.kappas.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof key, "%.2f", rep.kappas[i]);
    tj[key] = {{"per_class", opt_arr(rep.t_iou_per_class[i])},
               {"mean", opt_val(rep.t_iou_mean[i])}};
  }
  j["t_iou"] = tj;
  return j;
}

// Aligned plain-text table, classes as columns.
inline std::string metrics_to_table(const MetricsReport& rep) {
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof buf, "%8.3f", *v);
    else
      std::snprintf(buf, sizeof buf, "%8s", "-");
    os << buf;
  };
  os << "metric    ";
  for (int c = 0; c < rep.num_classes; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8s", ("c" + std::to_string(c)).c_str());
    os << buf;
  }
  os << "    mean\n";
  auto row = [&](const std::string& name, const std::vector<std::optional<double>>& v,
                 const std::optional<double>& mean) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%-10s", name.c_str());
    os << buf;
    for (const auto& x : v) cell(x);
    cell(mean);
    os << '\n';
  };
  row("AUC", rep.auc_per_class, rep.auc_mean);
  row("IoU", rep.iou_per_class, rep.iou_mean);
  row("cDice", rep.cdice_per_class, rep.cdice_mean);
  for (std::size_t i = 0; i < rep.kappas.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "T(%.2f)", rep.kappas[i]);
    row(name, rep.t_iou_per_class[i], rep.t_iou_mean[i]);
  }
  os << "n_loc     ";
  for (int c : rep.loc_counts) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8d", c);
    os << buf;
  }
  os << '\n';
  return os.str();
}

}  // namespace weakloc
