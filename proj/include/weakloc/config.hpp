#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "weakloc/data.hpp"
#include "weakloc/inference.hpp"
#include "weakloc/model.hpp"
#include "weakloc/train.hpp"

namespace weakloc {

// INI-style config text: [section] headers, key = value lines, # or ;
// comments.
struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static IniFile parse(const std::string& text) {
    IniFile ini;
    std::istringstream is(text);
    std::string line, section;
    int n = 0;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
      ++n;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw config_error("config line " + std::to_string(n) + ": unterminated section");
        section = trim(line.substr(1, line.size() - 2));
        ini.sections[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error("config line " + std::to_string(n) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty())
        throw config_error("config line " + std::to_string(n) + ": key outside any section");
      if (key.empty()) throw config_error("config line " + std::to_string(n) + ": empty key");
      ini.sections[section][key] = value;
    }
    return ini;
  }

  static IniFile load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  // "section.key=value" override.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw config_error("--set expects section.key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const auto dot = key.find('.');
    if (dot == std::string::npos)
      throw config_error("--set expects section.key=value, got '" + assignment + "'");
    sections[key.substr(0, dot)][key.substr(dot + 1)] = assignment.substr(eq + 1);
  }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [section, keys] : sections) {
      os << '[' << section << "]\n";
      for (const auto& [k, v] : keys) os << k << " = " << v << '\n';
      os << '\n';
    }
    return os.str();
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace detail {

inline int cfg_int(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw config_error(key + ": expected integer, got '" + v + "'");
  return int(x);
}

inline std::uint64_t cfg_u64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw config_error(key + ": expected unsigned integer, got '" + v + "'");
  return x;
}

inline double cfg_double(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw config_error(key + ": expected number, got '" + v + "'");
  return x;
}

inline bool cfg_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error(key + ": expected boolean, got '" + v + "'");
}

template <typename T, typename F>
std::vector<T> cfg_list(const std::string& v, const std::string& key, F parse_one) {
  std::vector<T> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) out.push_back(parse_one(cur, key));
  if (out.empty()) throw config_error(key + ": expected a comma-separated list");
  return out;
}

}  // namespace detail

// The merged run configuration: data, model/net, sampling, inference and
// metrics sections plus the run-scoped seed/thread knobs. Defaults follow the
// published settings wherever the source material pins one.
struct RunConfig {
  std::uint64_t seed = 1234;
  int threads = 1;
  SynthConfig data;
  int data_count = 200;
  ModelConfig model;
  TrainConfig train;
  double grid_lo = 0.05, grid_hi = 0.95, grid_step = 0.05;
  std::string variant = "mix";
  std::vector<double> kappas{0.3, 0.5, 0.6};

  static RunConfig from_ini(const IniFile& ini) {
    RunConfig rc;
    using namespace detail;
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"run.seed", [](RunConfig& c, const std::string& v, const std::string& k) { c.seed = cfg_u64(v, k); }},
        {"run.threads", [](RunConfig& c, const std::string& v, const std::string& k) { c.threads = cfg_int(v, k); }},
        {"data.image_size", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.image_size = cfg_int(v, k); }},
        {"data.num_classes", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.num_classes = cfg_int(v, k); }},
        {"data.count", [](RunConfig& c, const std::string& v, const std::string& k) { c.data_count = cfg_int(v, k); }},
        {"data.families",
         [](RunConfig& c, const std::string& v, const std::string& k) {
           c.data.families = cfg_list<ShapeFamily>(v, k, [](const std::string& s, const std::string&) {
             return shape_family_from_string(s);
           });
         }},
        {"data.min_extent", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.min_extent = cfg_double(v, k); }},
        {"data.max_extent", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.max_extent = cfg_double(v, k); }},
        {"data.min_intensity", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.min_intensity = cfg_double(v, k); }},
        {"data.max_intensity", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.max_intensity = cfg_double(v, k); }},
        {"data.background", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.background = cfg_double(v, k); }},
        {"data.noise", [](RunConfig& c, const std::string& v, const std::string& k) { c.data.noise = cfg_double(v, k); }},
        {"data.marginals",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.data.marginals = cfg_list<double>(v, k, cfg_double); }},
        {"regions.anchor_sizes",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.anchor_sizes = cfg_list<int>(v, k, cfg_int); }},
        {"regions.anchor_strides",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.anchor_strides = cfg_list<int>(v, k, cfg_int); }},
        {"regions.roi_size", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.roi_size = cfg_int(v, k); }},
        {"net.c1", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.c1 = cfg_int(v, k); }},
        {"net.c2", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.c2 = cfg_int(v, k); }},
        {"net.c3", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.c3 = cfg_int(v, k); }},
        {"net.lateral_channels", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.lateral_channels = cfg_int(v, k); }},
        {"net.q_channels", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.q_channels = cfg_int(v, k); }},
        {"net.sal_hidden", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.sal_hidden = cfg_int(v, k); }},
        {"net.det_hidden", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.det_hidden = cfg_int(v, k); }},
        {"net.delta_scale", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.delta_scale = cfg_double(v, k); }},
        {"net.crop_size", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.crop_size = cfg_int(v, k); }},
        {"net.crop_channels",
         [](RunConfig& c, const std::string& v, const std::string& k) {
           const auto list = cfg_list<int>(v, k, cfg_int);
           if (list.size() != 4) throw config_error(k + ": expected 4 values");
           std::copy(list.begin(), list.end(), c.model.crop_channels.begin());
         }},
        {"net.lse_r", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.lse_r = cfg_double(v, k); }},
        {"net.leaky_slope", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.leaky_slope = cfg_double(v, k); }},
        {"net.batch_size", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.batch_size = cfg_int(v, k); }},
        {"net.lr_stage12", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.lr_stage12 = cfg_double(v, k); }},
        {"net.lr_stage3", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.lr_stage3 = cfg_double(v, k); }},
        {"net.weight_decay", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.adam.weight_decay = cfg_double(v, k); }},
        {"net.beta1", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.adam.beta1 = cfg_double(v, k); }},
        {"net.beta2", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.adam.beta2 = cfg_double(v, k); }},
        {"net.adam_eps", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.adam.eps = cfg_double(v, k); }},
        {"net.steps_stage1", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.steps_stage1 = cfg_int(v, k); }},
        {"net.steps_stage2", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.steps_stage2 = cfg_int(v, k); }},
        {"net.steps_stage3", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.steps_stage3 = cfg_int(v, k); }},
        {"net.freeze_cls_stage2", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.freeze_cls_stage2 = cfg_bool(v, k); }},
        {"net.uniform_class_weights", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.uniform_class_weights = cfg_bool(v, k); }},
        {"net.augment", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.augment = cfg_bool(v, k); }},
        {"net.aug_zoom", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.aug.zoom = cfg_double(v, k); }},
        {"net.aug_translate", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.aug.translate = cfg_double(v, k); }},
        {"net.aug_rotate", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.aug.rotate_deg = cfg_double(v, k); }},
        {"net.aug_flip", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.aug.flip = cfg_bool(v, k); }},
        {"sampling.tau_start", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.tau_start = cfg_double(v, k); }},
        {"sampling.tau_end", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.tau_end = cfg_double(v, k); }},
        {"sampling.anneal_reset", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.anneal_reset = cfg_bool(v, k); }},
        {"inference.grid_lo", [](RunConfig& c, const std::string& v, const std::string& k) { c.grid_lo = cfg_double(v, k); }},
        {"inference.grid_hi", [](RunConfig& c, const std::string& v, const std::string& k) { c.grid_hi = cfg_double(v, k); }},
        {"inference.grid_step", [](RunConfig& c, const std::string& v, const std::string& k) { c.grid_step = cfg_double(v, k); }},
        {"inference.variant",
         [](RunConfig& c, const std::string& v, const std::string& k) {
           map_variant_from_string(v);  // validation only
           c.variant = v;
         }},
        {"metrics.kappas",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.kappas = cfg_list<double>(v, k, cfg_double); }},
    };
    for (const auto& [section, keys] : ini.sections)
      for (const auto& [key, value] : keys) {
        const std::string full = section + "." + key;
        const auto it = setters.find(full);
        if (it == setters.end()) throw config_error("unknown config key '" + full + "'");
        it->second(rc, value, full);
      }
    rc.finalize();
    return rc;
  }

  void finalize() {
    model.image_size = data.image_size;
    model.num_classes = data.num_classes;
    train.seed = seed;
    train.threads = threads;
    model.validate();
    TemperatureSchedule check(train.tau_start, train.tau_end, 1);  // validates the endpoints
    (void)check;
    if (data_count < 1) throw config_error("data.count must be >= 1");
    if (train.batch_size < 1) throw config_error("net.batch_size must be >= 1");
    if (!(train.lr_stage12 > 0.0) || !(train.lr_stage3 > 0.0))
      throw config_error("net learning rates must be positive");
    for (double kp : kappas)
      if (!(kp > 0.0) || !(kp < 1.0)) throw config_error("metrics.kappas must lie in (0,1)");
  }

  IniFile to_ini() const {
    IniFile ini;
    auto& run = ini.sections["run"];
    run["seed"] = std::to_string(seed);
    run["threads"] = std::to_string(threads);
    auto& d = ini.sections["data"];
    d["image_size"] = std::to_string(data.image_size);
    d["num_classes"] = std::to_string(data.num_classes);
    d["count"] = std::to_string(data_count);
    {
      std::string fams;
      for (int k = 0; k < data.num_classes; ++k)
        fams += std::string(k ? "," : "") + to_string(data.family(k));
      d["families"] = fams;
    }
    d["min_extent"] = fmt_double(data.min_extent);
    d["max_extent"] = fmt_double(data.max_extent);
    d["min_intensity"] = fmt_double(data.min_intensity);
    d["max_intensity"] = fmt_double(data.max_intensity);
    d["background"] = fmt_double(data.background);
    d["noise"] = fmt_double(data.noise);
    {
      std::string m;
      for (int k = 0; k < data.num_classes; ++k)
        m += std::string(k ? "," : "") + fmt_double(data.marginal(k));
      d["marginals"] = m;
    }
    auto& r = ini.sections["regions"];
    auto join_ints = [](const std::vector<int>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += std::string(i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    r["anchor_sizes"] = join_ints(model.anchor_sizes);
    r["anchor_strides"] = join_ints(model.anchor_strides);
    r["roi_size"] = std::to_string(model.roi_size);
    auto& n = ini.sections["net"];
    n["c1"] = std::to_string(model.c1);
    n["c2"] = std::to_string(model.c2);
    n["c3"] = std::to_string(model.c3);
    n["lateral_channels"] = std::to_string(model.lateral_channels);
    n["q_channels"] = std::to_string(model.q_channels);
    n["sal_hidden"] = std::to_string(model.sal_hidden);
    n["det_hidden"] = std::to_string(model.det_hidden);
    n["delta_scale"] = fmt_double(model.delta_scale);
    n["crop_size"] = std::to_string(model.crop_size);
    n["crop_channels"] = join_ints({model.crop_channels.begin(), model.crop_channels.end()});
    n["lse_r"] = fmt_double(model.lse_r);
    n["leaky_slope"] = fmt_double(model.leaky_slope);
    n["batch_size"] = std::to_string(train.batch_size);
    n["lr_stage12"] = fmt_double(train.lr_stage12);
    n["lr_stage3"] = fmt_double(train.lr_stage3);
    n["weight_decay"] = fmt_double(train.adam.weight_decay);
    n["beta1"] = fmt_double(train.adam.beta1);
    n["beta2"] = fmt_double(train.adam.beta2);
    n["adam_eps"] = fmt_double(train.adam.eps);
    n["steps_stage1"] = std::to_string(train.steps_stage1);
    n["steps_stage2"] = std::to_string(train.steps_stage2);
    n["steps_stage3"] = std::to_string(train.steps_stage3);
    n["freeze_cls_stage2"] = train.freeze_cls_stage2 ? "true" : "false";
    n["uniform_class_weights"] = train.uniform_class_weights ? "true" : "false";
    n["augment"] = train.augment ? "true" : "false";
    n["aug_zoom"] = fmt_double(train.aug.zoom);
    n["aug_translate"] = fmt_double(train.aug.translate);
    n["aug_rotate"] = fmt_double(train.aug.rotate_deg);
    n["aug_flip"] = train.aug.flip ? "true" : "false";
    auto& s = ini.sections["sampling"];
    s["tau_start"] = fmt_double(train.tau_start);
    s["tau_end"] = fmt_double(train.tau_end);
    s["anneal_reset"] = train.anneal_reset ? "true" : "false";
    auto& inf = ini.sections["inference"];
    inf["grid_lo"] = fmt_double(grid_lo);
    inf["grid_hi"] = fmt_double(grid_hi);
    inf["grid_step"] = fmt_double(grid_step);
    inf["variant"] = variant;
    auto& met = ini.sections["metrics"];
    {
      std::string ks;
      for (std::size_t i = 0; i < kappas.size(); ++i)
        ks += std::string(i ? "," : "") + fmt_double(kappas[i]);
      met["kappas"] = ks;
    }
    return ini;
  }

  std::string resolved_text() const { return to_ini().serialize(); }

  std::string config_hash() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(resolved_text())));
    return buf;
  }
};

}  // namespace weakloc
