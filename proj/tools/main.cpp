// Command-line front end: gen, train, sweep, infer, eval, ablate.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weakloc/config.hpp"
#include "weakloc/data.hpp"
#include "weakloc/inference.hpp"
#include "weakloc/io.hpp"
#include "weakloc/metrics.hpp"
#include "weakloc/model.hpp"
#include "weakloc/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace weakloc;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (INI-style sections)");
  cmd->add_option("--set", opts.sets, "Override a config value: section.key=value");
}

RunConfig resolve_config(const CommonOpts& opts) {
  IniFile ini = opts.config_path.empty() ? IniFile{} : IniFile::load(opts.config_path);
  for (const auto& s : opts.sets) ini.set(s);
  return RunConfig::from_ini(ini);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open " + path.string() + " for writing");
  os << text;
}

// Resolved config plus a manifest sufficient to re-run the command.
void write_run_records(const fs::path& dir, const std::string& command, const RunConfig& rc,
                       const json& inputs) {
  fs::create_directories(dir);
  write_text(dir / "config.ini", rc.resolved_text());
  json m;
  m["command"] = command;
  m["config_hash"] = rc.config_hash();
  m["seed"] = rc.seed;
  m["version"] = kVersion;
  m["inputs"] = inputs;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::string map_path(const fs::path& maps_dir, const std::string& id, int cls,
                     const char* suffix = "") {
  return (maps_dir / (id + "_c" + std::to_string(cls) + suffix + ".pgm")).string();
}

void dump_stack(const fs::path& maps_dir, const std::string& id, const SaliencyStack& s,
                const char* suffix = "") {
  for (int c = 0; c < s.k; ++c)
    write_pgm(map_path(maps_dir, id, c, suffix), s.h, s.w, s.channel(c));
}

// ---- gen ----

struct GenOpts {
  CommonOpts common;
  std::string out;
  int count = -1;
  bool force = false;
};

void cmd_gen(const GenOpts& o) {
  RunConfig rc = resolve_config(o.common);
  if (fs::exists(o.out) && !fs::is_empty(o.out) && !o.force)
    throw data_error("output directory " + o.out + " is not empty (use --force)");
  rc.data.seed = rc.seed;
  const int n = o.count > 0 ? o.count : rc.data_count;
  const auto records = generate(rc.data, n);
  save_dataset(o.out, records);
  write_run_records(o.out, "gen", rc, json{{"count", n}});
  std::printf("gen: wrote %d samples to %s (seed %llu)\n", n, o.out.c_str(),
              static_cast<unsigned long long>(rc.seed));
}

// ---- train ----

struct TrainOpts {
  CommonOpts common;
  std::string data_dir, out, init;
};

void cmd_train(const TrainOpts& o) {
  RunConfig rc = resolve_config(o.common);
  const auto ds = load_dir(o.data_dir);
  std::optional<ModelParams> init;
  if (!o.init.empty()) init = load_params(o.init, rc.model);
  TrainResult res = train(ds, rc.model, rc.train, init ? &*init : nullptr);
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < res.stage_checkpoints.size(); ++i)
    save_params((fs::path(o.out) / ("checkpoint_stage" + std::to_string(i + 1) + ".bin")).string(),
                res.stage_checkpoints[i]);
  save_params((fs::path(o.out) / "checkpoint_final.bin").string(), res.params);
  write_train_log((fs::path(o.out) / "log.csv").string(), res.log);
  write_run_records(o.out, "train", rc,
                    json{{"data", o.data_dir}, {"samples", ds.size()},
                         {"degenerate_boxes", res.diag.degenerate_boxes}});
  if (res.diverged)
    throw numeric_error("training diverged at step " + std::to_string(res.diverged_step) +
                        "; last good checkpoint written to " + o.out);
  std::printf("train: %zu steps, final checkpoint in %s\n", res.log.size(), o.out.c_str());
}

// ---- sweep ----

struct SweepOpts {
  CommonOpts common;
  std::string checkpoint, data_dir, out, variant;
};

void cmd_sweep(const SweepOpts& o) {
  RunConfig rc = resolve_config(o.common);
  const MapVariant variant = map_variant_from_string(o.variant.empty() ? rc.variant : o.variant);
  const auto ds = load_dir(o.data_dir);
  bool any_box = false;
  for (const auto& rec : ds)
    for (const auto& b : rec.boxes) any_box = any_box || b.has_value();
  if (!any_box) throw data_error("sweep: no annotated samples in " + o.data_dir);
  const ModelParams params = load_params(o.checkpoint, rc.model);
  const AnchorSet anchors = make_anchors(rc.model);

  std::vector<SaliencyStack> maps;
  maps.reserve(ds.size());
  for (const auto& rec : ds) {
    auto out = run_inference(rec, params, rc.model, anchors);
    maps.push_back(pick_map(out.maps, variant));
  }
  std::vector<const SaliencyStack*> map_ptrs;
  std::vector<const SampleRecord*> rec_ptrs;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    map_ptrs.push_back(&maps[i]);
    rec_ptrs.push_back(&ds[i]);
  }
  const auto grid = threshold_grid(rc.grid_lo, rc.grid_hi, rc.grid_step);
  const auto sel = select_thresholds(map_ptrs, rec_ptrs, grid);

  json j;
  j["variant"] = to_string(variant);
  j["grid"] = {{"lo", rc.grid_lo}, {"hi", rc.grid_hi}, {"step", rc.grid_step}};
  j["thresholds"] = sel.thresholds;
  j["defaulted"] = json::array();
  for (std::size_t c = 0; c < sel.defaulted.size(); ++c)
    if (sel.defaulted[c]) j["defaulted"].push_back(c);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  write_text(o.out, j.dump(2) + "\n");
  json m;
  m["command"] = "sweep";
  m["config_hash"] = rc.config_hash();
  m["seed"] = rc.seed;
  m["version"] = kVersion;
  m["inputs"] = {{"checkpoint", o.checkpoint}, {"data", o.data_dir},
                 {"variant", to_string(variant)}};
  write_text(o.out + ".manifest.json", m.dump(2) + "\n");
  std::printf("sweep: %s thresholds written to %s\n", to_string(variant), o.out.c_str());
}

std::vector<double> load_thresholds(const std::string& path, int k,
                                    const std::string& expect_variant) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open thresholds file " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw data_error("thresholds file " + path + " is not valid JSON");
  if (j.contains("variant") && j["variant"].get<std::string>() != expect_variant)
    throw config_error("thresholds in " + path + " were swept for variant '" +
                       j["variant"].get<std::string>() + "', not '" + expect_variant + "'");
  auto th = j.at("thresholds").get<std::vector<double>>();
  if (int(th.size()) != k)
    throw data_error("thresholds file " + path + " has " + std::to_string(th.size()) +
                     " entries, expected " + std::to_string(k));
  return th;
}

// ---- infer ----

struct InferOpts {
  CommonOpts common;
  std::string checkpoint, data_dir, thresholds, out, variant;
  bool dump_proposals = false;
};

void cmd_infer(const InferOpts& o) {
  RunConfig rc = resolve_config(o.common);
  const MapVariant variant = map_variant_from_string(o.variant.empty() ? rc.variant : o.variant);
  const auto ds = load_dir(o.data_dir);
  const int k = ds.empty() ? rc.model.num_classes : int(ds[0].labels.size());
  const ModelParams params = load_params(o.checkpoint, rc.model);
  const AnchorSet anchors = make_anchors(rc.model);
  const std::vector<double> thresholds =
      o.thresholds.empty() ? std::vector<double>(k, 0.5)
                           : load_thresholds(o.thresholds, k, to_string(variant));

  fs::create_directories(fs::path(o.out) / "maps");
  Diagnostics diag;
  std::vector<std::pair<std::string, std::vector<double>>> score_rows;
  std::vector<DetectionRow> det_rows;
  long omitted = 0, zero_conf_maps = 0;
  const std::string props_path = (fs::path(o.out) / "proposals.csv").string();
  bool props_started = false;
  for (const auto& rec : ds) {
    auto out = run_inference(rec, params, rc.model, anchors, &diag);
    zero_conf_maps += long(out.maps.zero_conf_classes.size());
    score_rows.emplace_back(rec.id, out.scores);
    const SaliencyStack& map = pick_map(out.maps, variant);
    const DetectionResult det = detect(map, thresholds);
    for (int c = 0; c < k; ++c) {
      if (det.boxes[c])
        det_rows.push_back(DetectionRow{rec.id, c, *det.boxes[c], thresholds[c]});
      else
        ++omitted;
    }
    dump_stack(fs::path(o.out) / "maps", rec.id, map);
    if (variant == MapVariant::mix) {
      dump_stack(fs::path(o.out) / "maps", rec.id, out.maps.sal, "_sal");
      dump_stack(fs::path(o.out) / "maps", rec.id, out.maps.rpn, "_rpn");
      dump_stack(fs::path(o.out) / "maps", rec.id, binarize_largest_cc(map, thresholds), "_bin");
    }
    if (o.dump_proposals) {
      write_proposals_csv(props_path, rec.id, out.proposals, props_started);
      props_started = true;
    }
  }
  write_scores_csv((fs::path(o.out) / "scores.csv").string(), score_rows);
  write_detections_csv((fs::path(o.out) / "detections.csv").string(), det_rows);
  json summary;
  summary["variant"] = to_string(variant);
  summary["samples"] = ds.size();
  summary["omitted_detections"] = omitted;
  summary["degenerate_boxes"] = diag.degenerate_boxes;
  summary["zero_confidence_maps"] = zero_conf_maps;
  write_text(fs::path(o.out) / "summary.json", summary.dump(2) + "\n");
  write_run_records(o.out, "infer", rc,
                    json{{"checkpoint", o.checkpoint}, {"data", o.data_dir},
                         {"thresholds", o.thresholds}, {"variant", to_string(variant)}});
  std::printf("infer: %zu samples, %zu detections (%ld empty) under %s\n", ds.size(),
              det_rows.size(), omitted, o.out.c_str());
}

// ---- eval ----

struct EvalOpts {
  CommonOpts common;
  std::string pred_dir, data_dir, out;
};

std::vector<Prediction> load_predictions(const std::string& pred_dir,
                                         const std::vector<SampleRecord>& ds) {
  const int k = ds.empty() ? 0 : int(ds[0].labels.size());
  const auto scores = read_scores_csv((fs::path(pred_dir) / "scores.csv").string());
  std::map<std::string, std::vector<double>> score_by_id(scores.begin(), scores.end());
  std::map<std::string, std::vector<std::optional<Box>>> boxes_by_id;
  const std::string det_path = (fs::path(pred_dir) / "detections.csv").string();
  if (fs::exists(det_path))
    for (const auto& row : read_detections_csv(det_path)) {
      auto& v = boxes_by_id[row.id];
      if (v.empty()) v.assign(k, std::nullopt);
      if (row.cls < 0 || row.cls >= k)
        throw data_error("detections.csv: class out of range for id " + row.id);
      v[row.cls] = row.box;
    }
  std::vector<Prediction> preds;
  for (const auto& rec : ds) {
    Prediction p;
    p.id = rec.id;
    const auto it = score_by_id.find(rec.id);
    if (it != score_by_id.end()) p.scores = it->second;
    const auto bit = boxes_by_id.find(rec.id);
    p.boxes = bit != boxes_by_id.end() ? bit->second
                                       : std::vector<std::optional<Box>>(k, std::nullopt);
    bool first = true;
    for (int c = 0; c < k; ++c) {
      const std::string mp = map_path(fs::path(pred_dir) / "maps", rec.id, c);
      if (!fs::exists(mp)) throw data_error("missing map dump " + mp);
      Tensor m = read_pgm(mp);
      if (first) {
        p.map = SaliencyStack(k, m.shape[1], m.shape[2], SaliencyStack::Kind::fused);
        first = false;
      }
      std::copy(m.data.begin(), m.data.end(), p.map.data.begin() + std::size_t(c) * m.numel());
    }
    preds.push_back(std::move(p));
  }
  // ids present in the prediction files but not in the dataset still count as
  // predictions so that evaluate() can report the mismatch
  for (const auto& [id, sc] : score_by_id) {
    bool known = false;
    for (const auto& rec : ds) known = known || rec.id == id;
    if (!known) {
      Prediction p;
      p.id = id;
      p.scores = sc;
      preds.push_back(std::move(p));
    }
  }
  return preds;
}

void cmd_eval(const EvalOpts& o) {
  RunConfig rc = resolve_config(o.common);
  const auto ds = load_dir(o.data_dir);
  const auto preds = load_predictions(o.pred_dir, ds);
  const MetricsReport rep = evaluate(preds, ds, rc.kappas);
  fs::create_directories(o.out);
  write_text(fs::path(o.out) / "metrics.json", metrics_to_json(rep).dump(2) + "\n");
  const std::string table = metrics_to_table(rep);
  write_text(fs::path(o.out) / "metrics.txt", table);
  write_run_records(o.out, "eval", rc, json{{"pred", o.pred_dir}, {"data", o.data_dir}});
  std::fputs(table.c_str(), stdout);
}

// ---- ablate ----

struct AblateOpts {
  CommonOpts common;
  std::string checkpoint, data_dir, sweep_dir, out;
};

void cmd_ablate(const AblateOpts& o) {
  RunConfig rc = resolve_config(o.common);
  const auto test_ds = load_dir(o.data_dir);
  const auto val_ds = load_dir(o.sweep_dir);
  const ModelParams params = load_params(o.checkpoint, rc.model);
  const AnchorSet anchors = make_anchors(rc.model);
  const auto grid = threshold_grid(rc.grid_lo, rc.grid_hi, rc.grid_step);
  const int k = rc.model.num_classes;

  std::vector<InferMaps> val_maps;
  for (const auto& rec : val_ds) val_maps.push_back(run_inference(rec, params, rc.model, anchors).maps);
  std::vector<InferenceOutput> test_out;
  for (const auto& rec : test_ds)
    test_out.push_back(run_inference(rec, params, rc.model, anchors));

  const MapVariant variants[3] = {MapVariant::sal, MapVariant::det, MapVariant::mix};
  std::map<std::string, MetricsReport> reports;
  fs::create_directories(o.out);
  for (MapVariant v : variants) {
    std::vector<const SaliencyStack*> map_ptrs;
    std::vector<const SampleRecord*> rec_ptrs;
    for (std::size_t i = 0; i < val_ds.size(); ++i) {
      map_ptrs.push_back(&pick_map(val_maps[i], v));
      rec_ptrs.push_back(&val_ds[i]);
    }
    const auto sel = select_thresholds(map_ptrs, rec_ptrs, grid);
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < test_ds.size(); ++i) {
      Prediction p;
      p.id = test_ds[i].id;
      p.scores = test_out[i].scores;
      p.map = pick_map(test_out[i].maps, v);
      p.boxes = detect(p.map, sel.thresholds).boxes;
      preds.push_back(std::move(p));
    }
    const MetricsReport rep = evaluate(preds, test_ds, rc.kappas);
    const fs::path vdir = fs::path(o.out) / to_string(v);
    fs::create_directories(vdir);
    write_text(vdir / "metrics.json", metrics_to_json(rep).dump(2) + "\n");
    write_text(vdir / "metrics.txt", metrics_to_table(rep));
    json th;
    th["variant"] = to_string(v);
    th["thresholds"] = sel.thresholds;
    write_text(vdir / "thresholds.json", th.dump(2) + "\n");
    reports.emplace(to_string(v), rep);
  }

  // comparison table: IoU and cDice rows for Sal / Det / Mix
  std::ostringstream os;
  os << "metric  method";
  for (int c = 0; c < k; ++c) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8s", ("c" + std::to_string(c)).c_str());
    os << buf;
  }
  os << "    mean\n";
  auto emit = [&](const char* metric, const char* method,
                  const std::vector<std::optional<double>>& per_class,
                  const std::optional<double>& mean) {
    char head[32];
    std::snprintf(head, sizeof head, "%-7s %-6s", metric, method);
    os << head;
    auto cell = [&](const std::optional<double>& v) {
      char buf[16];
      if (v)
        std::snprintf(buf, sizeof buf, "%8.3f", *v);
      else
        std::snprintf(buf, sizeof buf, "%8s", "-");
      os << buf;
    };
    for (const auto& v : per_class) cell(v);
    cell(mean);
    os << '\n';
  };
  for (const char* metric : {"IoU", "cDice"})
    for (const char* method : {"sal", "det", "mix"}) {
      const MetricsReport& r = reports.at(method);
      if (std::string(metric) == "IoU")
        emit(metric, method, r.iou_per_class, r.iou_mean);
      else
        emit(metric, method, r.cdice_per_class, r.cdice_mean);
    }
  const std::string table = os.str();
  write_text(fs::path(o.out) / "ablate.txt", table);
  json aj;
  for (const auto& [name, rep] : reports) aj[name] = metrics_to_json(rep);
  write_text(fs::path(o.out) / "ablate.json", aj.dump(2) + "\n");
  write_run_records(o.out, "ablate", rc,
                    json{{"checkpoint", o.checkpoint}, {"data", o.data_dir},
                         {"sweep_data", o.sweep_dir}});
  std::fputs(table.c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised classification and localization pipeline"};
  app.require_subcommand(1);

  GenOpts gen_opts;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen_cmd, gen_opts.common);
  gen_cmd->add_option("--out", gen_opts.out, "Output dataset directory")->required();
  gen_cmd->add_option("--count", gen_opts.count, "Number of samples (overrides data.count)");
  gen_cmd->add_flag("--force", gen_opts.force, "Overwrite a non-empty output directory");

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "Run the 3-stage training");
  add_common(train_cmd, train_opts.common);
  train_cmd->add_option("--data", train_opts.data_dir, "Training dataset directory")->required();
  train_cmd->add_option("--out", train_opts.out, "Output run directory")->required();
  train_cmd->add_option("--init", train_opts.init, "Checkpoint to resume from");

  SweepOpts sweep_opts;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Select per-class thresholds on annotated data");
  add_common(sweep_cmd, sweep_opts.common);
  sweep_cmd->add_option("--checkpoint", sweep_opts.checkpoint, "Checkpoint file")->required();
  sweep_cmd->add_option("--data", sweep_opts.data_dir, "Annotated dataset directory")->required();
  sweep_cmd->add_option("--out", sweep_opts.out, "Output thresholds JSON file")->required();
  sweep_cmd->add_option("--maps", sweep_opts.variant, "Map variant: sal, det or mix");

  InferOpts infer_opts;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Produce detections and map dumps");
  add_common(infer_cmd, infer_opts.common);
  infer_cmd->add_option("--checkpoint", infer_opts.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--data", infer_opts.data_dir, "Dataset directory")->required();
  infer_cmd->add_option("--thresholds", infer_opts.thresholds, "Thresholds JSON from sweep");
  infer_cmd->add_option("--out", infer_opts.out, "Output prediction directory")->required();
  infer_cmd->add_option("--maps", infer_opts.variant, "Map variant: sal, det or mix");
  infer_cmd->add_flag("--dump-proposals", infer_opts.dump_proposals,
                      "Also write proposals.csv with all refined proposals");

  EvalOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate predictions against a dataset");
  add_common(eval_cmd, eval_opts.common);
  eval_cmd->add_option("--pred", eval_opts.pred_dir, "Prediction directory from infer")->required();
  eval_cmd->add_option("--data", eval_opts.data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval_opts.out, "Output report directory")->required();

  AblateOpts ablate_opts;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Sweep, infer and evaluate the sal/det/mix variants");
  add_common(ablate_cmd, ablate_opts.common);
  ablate_cmd->add_option("--checkpoint", ablate_opts.checkpoint, "Checkpoint file")->required();
  ablate_cmd->add_option("--data", ablate_opts.data_dir, "Test dataset directory")->required();
  ablate_cmd->add_option("--sweep-data", ablate_opts.sweep_dir, "Annotated sweep dataset")
      ->required();
  ablate_cmd->add_option("--out", ablate_opts.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) cmd_gen(gen_opts);
    if (*train_cmd) cmd_train(train_opts);
    if (*sweep_cmd) cmd_sweep(sweep_opts);
    if (*infer_cmd) cmd_infer(infer_opts);
    if (*eval_cmd) cmd_eval(eval_opts);
    if (*ablate_cmd) cmd_ablate(ablate_opts);
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "filesystem error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
