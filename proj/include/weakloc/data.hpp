#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weakloc/io.hpp"
#include "weakloc/regions.hpp"
#include "weakloc/tensor.hpp"

namespace weakloc {

enum class ShapeFamily { gaussian, rectangle, ring, cross };

inline ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "gaussian") return ShapeFamily::gaussian;
  if (s == "rectangle") return ShapeFamily::rectangle;
  if (s == "ring") return ShapeFamily::ring;
  if (s == "cross") return ShapeFamily::cross;
  throw config_error("unknown shape family '" + s + "'");
}

inline const char* to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::gaussian: return "gaussian";
    case ShapeFamily::rectangle: return "rectangle";
    case ShapeFamily::ring: return "ring";
    case ShapeFamily::cross: return "cross";
  }
  return "?";
}

struct SynthConfig {
  int image_size = 128;
  int num_classes = 4;
  std::vector<ShapeFamily> families;  // per class; defaults cycle the four families
  double min_extent = 20.0, max_extent = 48.0;
  double min_intensity = 0.55, max_intensity = 0.95;
  double background = 0.25;  // base level under the noise, like tissue in a radiograph
  double noise = 0.08;
  std::vector<double> marginals;  // per-class positive rate, default 0.35
  std::uint64_t seed = 1;

  ShapeFamily family(int k) const {
    if (!families.empty()) return families[std::size_t(k) % families.size()];
    constexpr ShapeFamily cycle[4] = {ShapeFamily::gaussian, ShapeFamily::rectangle,
                                      ShapeFamily::ring, ShapeFamily::cross};
    return cycle[k % 4];
  }
  double marginal(int k) const {
    return marginals.empty() ? 0.35 : marginals[std::size_t(k) % marginals.size()];
  }
};

// One image with its weak label vector and, when available, per-class ground
// truth boxes. Images are stored single-channel; image3() replicates to the
// 3-channel tensor the model consumes.
struct SampleRecord {
  std::string id;
  Tensor image;  // [1,H,W], values in [0,1]
  std::vector<int> labels;
  std::vector<std::optional<Box>> boxes;

  Tensor image3() const {
    const int h = image.shape[1], w = image.shape[2];
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c)
      std::copy(image.data.begin(), image.data.end(), out.data.begin() + std::size_t(c) * h * w);
    return out;
  }
};

namespace detail {

// Renders one shape into `tmp` (zeroed by caller) and returns the tight box
// of its nonzero support. Soft profiles fade toward `floor`, the scene
// background level, so they stay visible against it.
inline Box render_shape(std::vector<double>& tmp, int h, int w, ShapeFamily family, double cx,
                        double cy, double extent, double aspect, double intensity,
                        double floor = 0.0) {
  const double R = 0.5 * extent;
  int rmin = h, rmax = -1, cmin = w, cmax = -1;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      const double dx = px - cx, dy = py - cy;
      double v = 0.0;
      switch (family) {
        case ShapeFamily::gaussian: {
          const double d2 = dx * dx + dy * dy;
          if (d2 <= R * R) {
            const double sigma = R / 2.2;
            v = floor + (intensity - floor) * std::exp(-d2 / (2.0 * sigma * sigma));
          }
          break;
        }
        case ShapeFamily::rectangle:
          if (std::abs(dx) <= R && std::abs(dy) <= R * aspect) v = intensity;
          break;
        case ShapeFamily::ring: {
          const double d = std::sqrt(dx * dx + dy * dy);
          if (d <= R && d >= 0.55 * R) v = intensity;
          break;
        }
        case ShapeFamily::cross: {
          const double t = std::max(2.0, extent / 6.0);
          if ((std::abs(dx) <= t && std::abs(dy) <= R) ||
              (std::abs(dy) <= t && std::abs(dx) <= R))
            v = intensity;
          break;
        }
      }
      if (v > 0.0) {
        tmp[std::size_t(r) * w + c] = v;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
    }
  if (rmax < 0) throw numeric_error("synthetic shape rendered no pixels");
  return box_from_extents(double(cmin), double(rmin), double(cmax + 1), double(rmax + 1));
}

}  // namespace detail

// Deterministic per seed: sample i depends only on derive_seed(seed, i).
inline std::vector<SampleRecord> generate(const SynthConfig& cfg, int n) {
  if (n < 1) throw config_error("generate: n must be >= 1");
  if (cfg.image_size < 16) throw config_error("generate: image_size too small");
  const int hw = cfg.image_size;
  std::vector<SampleRecord> out;
  out.reserve(std::size_t(n));
  std::vector<double> tmp(std::size_t(hw) * hw);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, std::uint64_t(i)));
    SampleRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "s%05d", i);
    rec.id = idbuf;
    rec.labels.resize(cfg.num_classes);
    for (int k = 0; k < cfg.num_classes; ++k)
      rec.labels[k] = uniform01(rng) < cfg.marginal(k) ? 1 : 0;
    rec.image = Tensor({1, hw, hw});
    for (double& v : rec.image.data)
      v = std::min(1.0, cfg.background + cfg.noise * uniform01(rng));
    rec.boxes.assign(cfg.num_classes, std::nullopt);
    for (int k = 0; k < cfg.num_classes; ++k) {
      if (!rec.labels[k]) continue;
      const double extent = uniform_in(rng, cfg.min_extent, cfg.max_extent);
      const double margin = 0.5 * extent + 2.0;
      const double cx = uniform_in(rng, margin, hw - margin);
      const double cy = uniform_in(rng, margin, hw - margin);
      const double intensity = uniform_in(rng, cfg.min_intensity, cfg.max_intensity);
      const double aspect = uniform_in(rng, 0.6, 1.0);
      std::fill(tmp.begin(), tmp.end(), 0.0);
      rec.boxes[k] = detail::render_shape(tmp, hw, hw, cfg.family(k), cx, cy, extent, aspect,
                                          intensity, cfg.background);
      for (std::size_t p = 0; p < tmp.size(); ++p)
        rec.image.data[p] = std::max(rec.image.data[p], tmp[p]);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// Layout: images/<id>.pgm, labels.csv (id, k1..kK), boxes.csv (id, class,
// cx, cy, w, h) with absent boxes simply omitted.
inline void save_dataset(const std::string& dir, const std::vector<SampleRecord>& records) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream labels(fs::path(dir) / "labels.csv");
  if (!labels) throw data_error("cannot write labels.csv under " + dir);
  const int k = records.empty() ? 0 : int(records[0].labels.size());
  labels << "id";
  for (int i = 1; i <= k; ++i) labels << ",k" << i;
  labels << '\n';
  std::ofstream boxes(fs::path(dir) / "boxes.csv");
  boxes << "id,class,cx,cy,w,h\n";
  for (const auto& rec : records) {
    const int h = rec.image.shape[1], w = rec.image.shape[2];
    write_pgm((fs::path(dir) / "images" / (rec.id + ".pgm")).string(), h, w,
              rec.image.data.data());
    labels << rec.id;
    for (int v : rec.labels) labels << ',' << v;
    labels << '\n';
    for (std::size_t c = 0; c < rec.boxes.size(); ++c)
      if (rec.boxes[c])
        boxes << rec.id << ',' << c << ',' << fmt_double(rec.boxes[c]->cx) << ','
              << fmt_double(rec.boxes[c]->cy) << ',' << fmt_double(rec.boxes[c]->w) << ','
              << fmt_double(rec.boxes[c]->h) << '\n';
  }
}

inline std::vector<SampleRecord> load_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string labels_path = (fs::path(dir) / "labels.csv").string();
  const auto rows = read_csv(labels_path);
  std::vector<SampleRecord> out;
  std::map<std::string, std::size_t> index;
  int num_classes = -1;
  for (const auto& row : rows) {
    if (row.fields.size() < 2)
      throw data_error(labels_path + " line " + std::to_string(row.line) +
                       ": expected id and at least one label");
    SampleRecord rec;
    rec.id = row.fields[0];
    if (num_classes < 0) num_classes = int(row.fields.size()) - 1;
    if (int(row.fields.size()) - 1 != num_classes)
      throw data_error(labels_path + " line " + std::to_string(row.line) +
                       ": inconsistent label count");
    for (int k = 0; k < num_classes; ++k) {
      const int v = parse_int(row.fields[std::size_t(k) + 1], labels_path, row.line);
      if (v != 0 && v != 1)
        throw data_error(labels_path + " line " + std::to_string(row.line) +
                         ": labels must be 0 or 1");
      rec.labels.push_back(v);
    }
    const fs::path pgm = fs::path(dir) / "images" / (rec.id + ".pgm");
    const fs::path png = fs::path(dir) / "images" / (rec.id + ".png");
    if (fs::exists(pgm))
      rec.image = read_pgm(pgm.string());
    else if (fs::exists(png))
      rec.image = read_png_gray(png.string());
    else
      throw data_error("missing image file for id '" + rec.id + "' under " + dir);
    rec.boxes.assign(num_classes, std::nullopt);
    index[rec.id] = out.size();
    out.push_back(std::move(rec));
  }
  const std::string boxes_path = (fs::path(dir) / "boxes.csv").string();
  if (fs::exists(boxes_path)) {
    for (const auto& row : read_csv(boxes_path)) {
      if (row.fields.size() != 6)
        throw data_error(boxes_path + " line " + std::to_string(row.line) +
                         ": expected 6 fields");
      const auto it = index.find(row.fields[0]);
      if (it == index.end())
        throw data_error(boxes_path + " line " + std::to_string(row.line) + ": unknown id '" +
                         row.fields[0] + "'");
      const int cls = parse_int(row.fields[1], boxes_path, row.line);
      if (cls < 0 || cls >= num_classes)
        throw data_error(boxes_path + " line " + std::to_string(row.line) +
                         ": class out of range");
      Box b;
      b.cx = parse_double(row.fields[2], boxes_path, row.line);
      b.cy = parse_double(row.fields[3], boxes_path, row.line);
      b.w = parse_double(row.fields[4], boxes_path, row.line);
      b.h = parse_double(row.fields[5], boxes_path, row.line);
      if (b.w <= 0 || b.h <= 0)
        throw data_error(boxes_path + " line " + std::to_string(row.line) +
                         ": box must have positive size");
      out[it->second].boxes[cls] = b;
    }
  }
  return out;
}

}  // namespace weakloc
