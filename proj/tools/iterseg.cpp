// iterseg command-line driver.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iterseg/checkpoint.hpp"
#include "iterseg/config.hpp"
#include "iterseg/dataset.hpp"
#include "iterseg/engine.hpp"
#include "iterseg/gradcheck.hpp"
#include "iterseg/image_io.hpp"
#include "iterseg/metrics.hpp"
#include "iterseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace iterseg;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // key=value
  std::string out;
  bool force = false;
};

struct LoadedConfig {
  RunConfig config;
  std::string file_text;  // verbatim, empty when no file was given
};

LoadedConfig load_run_config(const Common& c) {
  LoadedConfig lc;
  if (!c.config_path.empty()) {
    lc.file_text = read_text(c.config_path);
    apply_config_text(lc.config, lc.file_text);
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(lc.config, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (c.seed) lc.config.seed = *c.seed;
  lc.config.validate();
  return lc;
}

// Refuses an existing non-empty directory unless forced; creates it.
void prepare_out_dir(const std::string& out, bool force) {
  if (out.empty()) throw ConfigError("--out is required");
  const fs::path p(out);
  std::error_code ec;
  if (fs::exists(p, ec)) {
    if (!fs::is_directory(p, ec)) throw IoError("output path " + out + " exists and is not a directory");
    if (!fs::is_empty(p, ec) && !force)
      throw IoError("output directory " + out + " is not empty (use --force to overwrite)");
    if (force) {
      for (const auto& entry : fs::directory_iterator(p, ec)) fs::remove_all(entry.path(), ec);
      if (ec) throw IoError("cannot clear output directory " + out + ": " + ec.message());
    }
  }
  ensure_directory(p);
  const fs::path probe = p / ".write_probe";
  {
    std::FILE* f = std::fopen(probe.c_str(), "wb");
    if (!f) throw IoError("output directory " + out + " is not writable");
    std::fclose(f);
  }
  fs::remove(probe, ec);
}

std::string hex(const unsigned char* d, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < n; ++i) {
    s += digits[d[i] >> 4];
    s += digits[d[i] & 15];
  }
  return s;
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned n = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr);
  return hex(md, n);
}

// Git blob object id of a file's contents.
std::string git_blob_hash(const std::string& content) {
  return sha1_hex("blob " + std::to_string(content.size()) + std::string(1, '\0') + content);
}

std::string read_binary(const fs::path& p) {
  const auto bytes = detail::read_file(p);
  return std::string(bytes.begin(), bytes.end());
}

// Git-style tree id over every regular file below `dir` (sorted relative
// paths, blob ids).
std::string tree_hash(const fs::path& dir) {
  std::vector<std::string> rel;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(rel.begin(), rel.end());
  std::string listing;
  for (const auto& r : rel) listing += git_blob_hash(read_binary(dir / r)) + "  " + r + "\n";
  return sha1_hex(listing);
}

void check_dataset_matches(const DatasetIndex& idx, const ArchDescriptor& arch) {
  if (idx.patch_size != arch.patch_size || idx.heatmap_size != arch.heatmap_size ||
      idx.num_categories != arch.num_categories)
    throw MismatchError("dataset geometry (patch " + std::to_string(idx.patch_size) + ", heatmap " +
                        std::to_string(idx.heatmap_size) + ", categories " +
                        std::to_string(idx.num_categories) + ") differs from the model (patch " +
                        std::to_string(arch.patch_size) + ", heatmap " +
                        std::to_string(arch.heatmap_size) + ", categories " +
                        std::to_string(arch.num_categories) + ")");
}

// ---- commands ----

int cmd_generate_data(const Common& c) {
  const LoadedConfig lc = load_run_config(c);
  prepare_out_dir(c.out, c.force);
  const Json echo = {{"text", render_config(lc.config)}};
  const auto summary = build_dataset(lc.config.dataset_config(), lc.config.seed, c.out, echo);
  std::cout << "wrote " << summary.index.scenes.size() << " scenes, "
            << summary.index.samples.size() << " patches to " << c.out << " ("
            << summary.report.regenerated_scenes << " scenes regenerated)\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir) {
  const LoadedConfig lc = load_run_config(c);
  const RunConfig& cfg = lc.config;
  const DatasetIndex idx = load_index(data_dir);
  check_dataset_matches(idx, cfg.arch);
  const auto samples = load_samples(data_dir, idx, Split::train);
  prepare_out_dir(c.out, c.force);
  const fs::path out(c.out);

  std::string loss_csv = "step,stage,loss\n";
  TrainCallbacks cb;
  cb.on_step = [&](const LossRecord& r) {
    loss_csv += std::to_string(r.step) + "," + std::to_string(r.stage) + "," +
                format_double(r.loss) + "\n";
    if (r.step % 500 == 0)
      std::cerr << "stage " << r.stage << " step " << r.step << " loss " << r.loss << "\n";
  };
  cb.on_stage_end = [&](std::size_t t, const SegNet& net, const PredictionStore&) {
    save_checkpoint(out / ("stage" + std::to_string(t) + ".ckpt"), net);
  };
  std::cerr << "training on " << samples.size() << " patches, "
            << cfg.schedule.num_stages() << " stages\n";
  TrainResult res;
  try {
    res = train_stages(samples, init_params(cfg.arch, cfg.seed), cfg.schedule, cfg.seed, cb);
  } catch (const DivergenceError&) {
    write_text(out / "loss.csv", loss_csv);
    throw;
  }
  save_checkpoint(out / "model.ckpt", res.net);
  write_text(out / "loss.csv", loss_csv);
  const std::string effective = render_config(cfg);
  write_text(out / "config.txt", effective);

  Json stages = Json::array();
  for (std::size_t t = 1; t <= cfg.schedule.num_stages(); ++t) {
    const std::string name = "stage" + std::to_string(t) + ".ckpt";
    stages.push_back({{"stage", t}, {"file", name}, {"hash", git_blob_hash(read_binary(out / name))}});
  }
  const Json manifest = {
      {"format", "iterseg-run"},
      {"version", 1},
      {"seed", cfg.seed},
      {"config_file", c.config_path},
      {"config_file_text", lc.file_text},
      {"config_overrides", c.overrides},
      {"effective_config", effective},
      {"config_hash", git_blob_hash(effective)},
      {"inputs",
       {{"dataset", fs::absolute(data_dir).lexically_normal().string()},
        {"index_hash", git_blob_hash(read_text(fs::path(data_dir) / "index.json"))},
        {"manifest_hash", git_blob_hash(read_text(fs::path(data_dir) / "manifest.json"))},
        {"dataset_tree_hash", tree_hash(data_dir)}}},
      {"training_patches", samples.size()},
      {"steps", res.trace.size()},
      {"final_loss", res.trace.empty() ? 0.0 : res.trace.back().loss},
      {"stages", stages},
      {"model", {{"file", "model.ckpt"}, {"hash", git_blob_hash(read_binary(out / "model.ckpt"))}}}};
  write_text(out / "run_manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& data_dir,
              const std::string& split, bool emit_trajectory,
              const std::optional<std::string>& superpixels, std::optional<std::size_t> iterations) {
  Common cc = c;
  if (superpixels) cc.overrides.push_back("superpixels=" + *superpixels);
  if (iterations) cc.overrides.push_back("iterations=" + std::to_string(*iterations));
  const LoadedConfig lc = load_run_config(cc);
  const SegNet net = load_checkpoint(checkpoint);
  const DatasetIndex idx = load_index(data_dir);
  check_dataset_matches(idx, net.arch());
  const auto scenes = scenes_in_split(idx, split);
  prepare_out_dir(c.out, c.force);

  std::vector<SegmentedDetection> all;
  std::vector<std::size_t> ids;
  for (const SceneRecord* rec : scenes) {
    const Scene scene = load_scene(data_dir, *rec);
    auto dets = segment_scene(net, scene, *rec, lc.config.eval);
    for (auto& d : dets) all.push_back(std::move(d));
    ids.push_back(rec->id);
  }
  const Json provenance = {{"checkpoint", checkpoint},
                           {"checkpoint_hash", git_blob_hash(read_binary(checkpoint))},
                           {"dataset", data_dir},
                           {"split", split}};
  write_predictions(c.out, ids, all, idx.scene_size, lc.config.eval, emit_trajectory, provenance);
  std::cout << "wrote " << all.size() << " detections over " << ids.size() << " scenes to "
            << c.out << "\n";
  return 0;
}

std::string category_name(std::size_t c) {
  return c < kShapeFamilyNames.size() ? std::string(kShapeFamilyNames[c]) : "cat" + std::to_string(c);
}

int cmd_evaluate(const Common& c, const std::string& pred_dir, const std::string& data_dir,
                 const std::string& baseline_dir, const std::optional<std::string>& thresholds) {
  Common cc = c;
  if (thresholds) cc.overrides.push_back("eval_thresholds=" + *thresholds);
  const LoadedConfig lc = load_run_config(cc);
  const EvalConfig& ecfg = lc.config.eval;
  const DatasetIndex idx = load_index(data_dir);
  const PredictionSet preds = read_predictions(pred_dir);
  const auto gts = load_ground_truth(data_dir, idx, preds);
  std::optional<PredictionSet> base;
  if (!baseline_dir.empty()) {
    base = read_predictions(baseline_dir);
    load_ground_truth(data_dir, idx, *base);
  }
  prepare_out_dir(c.out, c.force);
  const fs::path out(c.out);

  const auto kept = region_nms(preds.detections, ecfg.region_nms_threshold);
  const auto tables = mean_apr(kept, gts, ecfg.thresholds, idx.num_categories);
  Json jt = Json::array();
  for (const auto& t : tables) {
    Json cats = Json::array();
    for (const auto& ca : t.categories) {
      cats.push_back({{"category", ca.category},
                      {"name", category_name(ca.category)},
                      {"ap", ca.curve.ap},
                      {"undefined", ca.curve.undefined},
                      {"num_gt", ca.num_gt},
                      {"num_detections", ca.num_detections}});
      std::string csv = "recall,precision\n";
      for (const auto& [r, p] : ca.curve.points) csv += format_double(r) + "," + format_double(p) + "\n";
      char thr[32];
      std::snprintf(thr, sizeof thr, "%g", t.threshold);
      write_text(out / ("pr_" + category_name(ca.category) + "_" + thr + ".csv"), csv);
    }
    jt.push_back({{"threshold", t.threshold}, {"mean_ap", t.mean_ap}, {"categories", cats}});
    std::cout << "mAP^r@" << t.threshold << " = " << t.mean_ap * 100.0 << "\n";
  }
  Json report = {{"format", "iterseg-eval"},
                 {"version", 1},
                 {"predictions", pred_dir},
                 {"dataset", data_dir},
                 {"iterations", preds.iterations},
                 {"superpixels", preds.superpixels},
                 {"region_nms_threshold", ecfg.region_nms_threshold},
                 {"detections", preds.detections.size()},
                 {"detections_after_nms", kept.size()},
                 {"ground_truth", gts.size()},
                 {"tables", jt}};
  if (base) {
    const ScatterSummary s = scatter_by_id(base->detections, preds.detections, gts);
    std::string csv = "id,baseline_iou,proposed_iou,category\n";
    for (const auto& p : s.points)
      csv += std::to_string(p.id) + "," + format_double(p.baseline_iou) + "," +
             format_double(p.proposed_iou) + "," + std::to_string(p.category) + "\n";
    write_text(out / "scatter.csv", csv);
    report["scatter"] = {{"baseline", baseline_dir},
                         {"points", s.points.size()},
                         {"improved", s.improved},
                         {"degraded", s.degraded},
                         {"equal", s.equal}};
    std::cout << "improved " << s.improved * 100.0 << "%, degraded " << s.degraded * 100.0 << "%\n";
  }
  write_text(out / "eval_report.json", report.dump(2) + "\n");
  return 0;
}

int cmd_gradcheck(const Common& c, std::size_t num_seeds, bool corrupt) {
  const LoadedConfig lc = load_run_config(c);
  ArchDescriptor arch = lc.config.arch;
  arch.patch_size = 16;
  arch.heatmap_size = 8;
  arch.validate();
  GradcheckOptions opt;
  if (corrupt) opt.corrupt_scale = 1.01;
  bool all_passed = true;
  double worst = 0.0;
  Json seeds = Json::array();
  for (std::size_t k = 0; k < num_seeds; ++k) {
    const std::uint64_t seed = lc.config.seed + k;
    const GradcheckReport r = gradcheck_segnet(arch, seed, opt);
    std::cout << "seed " << seed << (r.passed ? " PASS" : " FAIL")
              << " max_rel_error " << format_double(r.max_rel_error) << "\n";
    Json arrays = Json::array();
    for (const auto& a : r.arrays) {
      std::cout << "  " << a.name << " size " << a.size << " checked " << a.checked
                << " kink_skipped " << a.kink_skipped << " max_rel_error "
                << format_double(a.max_rel_error) << "\n";
      arrays.push_back({{"name", a.name},
                        {"size", a.size},
                        {"checked", a.checked},
                        {"kink_skipped", a.kink_skipped},
                        {"max_rel_error", a.max_rel_error}});
    }
    seeds.push_back({{"seed", seed}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error},
                     {"arrays", arrays}});
    all_passed = all_passed && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  std::cout << (all_passed ? "gradcheck PASS" : "gradcheck FAIL") << " (max relative error "
            << format_double(worst) << ", tolerance " << format_double(opt.tolerance) << ")\n";
  if (!c.out.empty()) {
    prepare_out_dir(c.out, c.force);
    const Json report = {{"passed", all_passed},
                         {"max_rel_error", worst},
                         {"tolerance", opt.tolerance},
                         {"corrupted", corrupt},
                         {"patch_size", arch.patch_size},
                         {"heatmap_size", arch.heatmap_size},
                         {"seeds", seeds}};
    write_text(fs::path(c.out) / "gradcheck.json", report.dump(2) + "\n");
  }
  return all_passed ? 0 : 1;
}

int cmd_probe(const Common& c, const std::string& checkpoint, const std::string& patch_path,
              const std::string& data_dir, std::size_t count, std::optional<std::size_t> iterations) {
  Common cc = c;
  if (iterations) cc.overrides.push_back("iterations=" + std::to_string(*iterations));
  const LoadedConfig lc = load_run_config(cc);
  const SegNet net = load_checkpoint(checkpoint);
  const std::size_t p = net.arch().patch_size;

  std::vector<std::pair<std::string, RgbImage>> patches;
  if (!patch_path.empty()) {
    RgbImage img = read_ppm(patch_path);
    if (img.width != p || img.height != p)
      img = crop_resize(img, Box{0, 0, static_cast<int>(img.width), static_cast<int>(img.height)}, p);
    patches.emplace_back("patch", std::move(img));
  } else if (!data_dir.empty()) {
    const DatasetIndex idx = load_index(data_dir);
    check_dataset_matches(idx, net.arch());
    for (const auto& s : idx.samples) {
      if (s.split != Split::val) continue;
      if (patches.size() >= count) break;
      patches.emplace_back(zero_pad(s.id), read_ppm(fs::path(data_dir) / paths::patch_image(s.id)));
    }
    if (patches.empty()) throw DataError("no validation patches in " + data_dir);
  } else {
    throw ConfigError("probe needs --patch or --data");
  }
  prepare_out_dir(c.out, c.force);
  const fs::path out(c.out);
  const std::size_t cats = net.arch().num_categories;
  std::vector<std::vector<double>> mean_dist(cats, std::vector<double>(cats, 0.0));
  double mean_off = 0.0;
  Json per = Json::array();
  for (const auto& [name, img] : patches) {
    const ProbeResult r = category_swap_probe(net, img, lc.config.eval.iterations);
    for (std::size_t k = 0; k < cats; ++k)
      write_text(out / (name + "_cat" + std::to_string(k) + ".csv"), heatmap_csv(r.heatmaps[k]));
    for (std::size_t i = 0; i < cats; ++i)
      for (std::size_t j = 0; j < cats; ++j)
        mean_dist[i][j] += r.distance[i][j] / static_cast<double>(patches.size());
    mean_off += r.mean_off_diagonal / static_cast<double>(patches.size());
    per.push_back({{"patch", name}, {"mean_off_diagonal", r.mean_off_diagonal}});
  }
  std::string csv;
  for (std::size_t i = 0; i < cats; ++i) {
    for (std::size_t j = 0; j < cats; ++j) csv += (j ? "," : "") + format_double(mean_dist[i][j]);
    csv += "\n";
  }
  write_text(out / "distance.csv", csv);
  const Json report = {{"checkpoint", checkpoint},
                       {"iterations", lc.config.eval.iterations},
                       {"patches", per},
                       {"mean_off_diagonal", mean_off},
                       {"distance", mean_dist}};
  write_text(out / "probe.json", report.dump(2) + "\n");
  std::cout << "mean off-diagonal L1 distance " << format_double(mean_off) << " over "
            << patches.size() << " patches\n";
  return 0;
}

void add_common(CLI::App* app, Common& c, bool needs_out) {
  app->add_option("--config", c.config_path, "key = value configuration file");
  app->add_option("--seed", c.seed, "overrides the configured seed");
  app->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
  auto* out = app->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  app->add_flag("--force", c.force, "overwrite a non-empty output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iterseg: iterative instance segmentation on synthetic scenes"};
  app.require_subcommand(1);

  Common c;
  std::string data_dir, checkpoint, split = "val", baseline, patch_path, pred_dir;
  bool emit_trajectory = false, corrupt = false;
  std::optional<std::string> superpixels, thresholds;
  std::optional<std::size_t> iterations;
  std::size_t num_seeds = 10, probe_count = 20;

  auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset");
  add_common(gen, c, true);

  auto* train = app.add_subcommand("train", "staged training");
  add_common(train, c, true);
  train->add_option("--data", data_dir, "dataset directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "iterative inference over a dataset split");
  add_common(infer_cmd, c, true);
  infer_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer_cmd->add_option("--data", data_dir, "dataset directory")->required();
  infer_cmd->add_option("--split", split, "train, val or all")->capture_default_str();
  infer_cmd->add_option("--iterations", iterations, "refinement steps M");
  infer_cmd->add_option("--superpixels", superpixels, "on or off");
  infer_cmd->add_flag("--emit-trajectory", emit_trajectory, "write every intermediate heatmap");

  auto* eval = app.add_subcommand("evaluate", "region AP evaluation");
  add_common(eval, c, true);
  eval->add_option("--predictions", pred_dir, "predictions directory")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--baseline", baseline, "baseline predictions directory for the overlap scatter");
  eval->add_option("--thresholds", thresholds, "comma-separated IoU thresholds");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check at reduced size");
  add_common(gc, c, false);
  gc->add_option("--seeds", num_seeds, "number of consecutive seeds")->capture_default_str();
  gc->add_flag("--corrupt", corrupt, "self-test: scale analytic gradients by 1.01");

  auto* probe = app.add_subcommand("probe", "category-swap probe");
  add_common(probe, c, true);
  probe->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  probe->add_option("--patch", patch_path, "single P6 patch");
  probe->add_option("--data", data_dir, "dataset directory (uses validation patches)");
  probe->add_option("--count", probe_count, "patches taken from --data")->capture_default_str();
  probe->add_option("--iterations", iterations, "refinement steps M");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate_data(c);
    if (*train) return cmd_train(c, data_dir);
    if (*infer_cmd)
      return cmd_infer(c, checkpoint, data_dir, split, emit_trajectory, superpixels, iterations);
    if (*eval) return cmd_evaluate(c, pred_dir, data_dir, baseline, thresholds);
    if (*gc) return cmd_gradcheck(c, num_seeds, corrupt);
    if (*probe) return cmd_probe(c, checkpoint, patch_path, data_dir, probe_count, iterations);
  } catch (const Error& e) {
    std::cerr << "iterseg: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "iterseg: error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
