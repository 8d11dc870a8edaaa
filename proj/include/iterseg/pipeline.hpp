#pragma once

// Scene-level inference and evaluation glue: detections -> box NMS ->
// iterative refinement -> paste -> optional superpixels -> binarize; the
// predictions directory; region-NMS + AP^r evaluation; refinement analysis.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iterseg/config.hpp"
#include "iterseg/dataset.hpp"
#include "iterseg/engine.hpp"
#include "iterseg/image_io.hpp"
#include "iterseg/metrics.hpp"
#include "iterseg/postprocess.hpp"

namespace iterseg {

struct SegmentedDetection {
  DetectionRecord det;
  std::size_t scene = 0;
  std::vector<Heatmap> trajectory;  // y^(0) .. y^(M)
  Heatmap heat;                     // final heatmap pasted (and projected) at scene size
  Mask region;
};

inline std::vector<std::size_t> box_nms(const std::vector<DetectionRecord>& dets,
                                        double threshold) {
  std::vector<ScoredItem> items;
  for (const auto& d : dets) items.push_back({d.id, d.score});
  return nms(
      items, [&](std::size_t a, std::size_t b) { return box_iou(dets[a].bbox, dets[b].bbox); },
      threshold);
}

// Box NMS, then M refinement steps per surviving detection.
inline std::vector<SegmentedDetection> segment_scene(const SegNet& net, const Scene& scene,
                                                     const SceneRecord& rec,
                                                     const EvalConfig& cfg) {
  std::vector<SegmentedDetection> out;
  const auto kept = box_nms(rec.detections, cfg.box_nms_threshold);
  if (kept.empty()) return out;
  const std::size_t w = scene.image.width, h = scene.image.height;
  std::vector<RgbImage> patches;
  std::vector<std::size_t> cats;
  for (std::size_t k : kept) {
    patches.push_back(crop_resize(scene.image, rec.detections[k].bbox, net.arch().patch_size));
    cats.push_back(rec.detections[k].category);
  }
  std::vector<const RgbImage*> ptrs;
  for (const auto& p : patches) ptrs.push_back(&p);
  auto traj = infer_many(net, ptrs, cats, cfg.iterations);

  SuperpixelMap sp;
  if (cfg.superpixels) sp = compute_superpixels(scene.image, cfg.superpixel);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    SegmentedDetection s;
    s.det = rec.detections[kept[j]];
    s.scene = rec.id;
    s.heat = paste_heatmap(traj[j].back(), s.det.bbox, w, h);
    if (cfg.superpixels) s.heat = project_to_superpixels(s.heat, sp);
    s.region = binarize(s.heat, cfg.binarize_threshold);
    s.trajectory = std::move(traj[j]);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<const SceneRecord*> scenes_in_split(const DatasetIndex& idx,
                                                       const std::string& split) {
  std::vector<const SceneRecord*> out;
  for (const auto& s : idx.scenes)
    if (split == "all" || to_string(s.split) == split) out.push_back(&s);
  if (split != "all" && split != "train" && split != "val")
    throw ConfigError("split must be train, val or all (got '" + split + "')");
  return out;
}

// ---- predictions directory ----

namespace pred_paths {
inline std::string region(std::size_t id) { return "regions/" + zero_pad(id) + ".pgm"; }
inline std::string heat(std::size_t id) { return "heat/" + zero_pad(id) + ".csv"; }
inline std::string heat_step(std::size_t id, std::size_t t) {
  return "heat/" + zero_pad(id) + "_t" + std::to_string(t) + ".csv";
}
}  // namespace pred_paths

inline std::string heatmap_csv(const Heatmap& h) {
  std::string s;
  for (std::size_t y = 0; y < h.height; ++y) {
    for (std::size_t x = 0; x < h.width; ++x) {
      if (x) s += ',';
      s += format_double(h(x, y));
    }
    s += '\n';
  }
  return s;
}

struct PredictionSet {
  std::size_t iterations = 0;
  bool superpixels = false;
  std::size_t scene_size = 0;
  std::vector<std::size_t> scenes;
  std::vector<Detection> detections;
};

inline void write_predictions(const std::filesystem::path& dir,
                              const std::vector<std::size_t>& scene_ids,
                              const std::vector<SegmentedDetection>& dets,
                              std::size_t scene_size, const EvalConfig& cfg,
                              bool emit_trajectory, const Json& provenance) {
  ensure_directory(dir / "regions");
  ensure_directory(dir / "heat");
  Json list = Json::array();
  for (const auto& d : dets) {
    write_mask_pgm(dir / pred_paths::region(d.det.id), d.region);
    write_text(dir / pred_paths::heat(d.det.id), heatmap_csv(d.trajectory.back()));
    if (emit_trajectory)
      for (std::size_t t = 0; t < d.trajectory.size(); ++t)
        write_text(dir / pred_paths::heat_step(d.det.id, t), heatmap_csv(d.trajectory[t]));
    list.push_back({{"id", d.det.id},
                    {"scene", d.scene},
                    {"instance", d.det.instance},
                    {"category", d.det.category},
                    {"score", d.det.score},
                    {"bbox", box_json(d.det.bbox)},
                    {"region", pred_paths::region(d.det.id)},
                    {"heat", pred_paths::heat(d.det.id)},
                    {"foreground_pixels", count_foreground(d.region)}});
  }
  Json j = {{"format", "iterseg-predictions"},
            {"version", 1},
            {"iterations", cfg.iterations},
            {"superpixels", cfg.superpixels},
            {"binarize_threshold", cfg.binarize_threshold},
            {"box_nms_threshold", cfg.box_nms_threshold},
            {"scene_size", scene_size},
            {"emit_trajectory", emit_trajectory},
            {"provenance", provenance},
            {"scenes", scene_ids},
            {"detections", list}};
  write_text(dir / "predictions.json", j.dump(1) + "\n");
}

inline PredictionSet read_predictions(const std::filesystem::path& dir) {
  const Json j = read_json(dir / "predictions.json");
  PredictionSet p;
  try {
    if (j.at("format") != "iterseg-predictions")
      throw DataError(dir.string() + " is not a predictions directory");
    p.iterations = j.at("iterations").get<std::size_t>();
    p.superpixels = j.at("superpixels").get<bool>();
    p.scene_size = j.at("scene_size").get<std::size_t>();
    p.scenes = j.at("scenes").get<std::vector<std::size_t>>();
    for (const auto& d : j.at("detections")) {
      Detection det;
      det.id = d.at("id").get<std::size_t>();
      det.scene = d.at("scene").get<std::size_t>();
      det.category = d.at("category").get<std::size_t>();
      det.score = d.at("score").get<double>();
      det.bbox = box_from_json(d.at("bbox"));
      det.region = read_mask_pgm(dir / d.at("region").get<std::string>());
      if (det.region.width != p.scene_size || det.region.height != p.scene_size)
        throw DataError("region of detection " + std::to_string(det.id) +
                        " does not match the scene size");
      p.detections.push_back(std::move(det));
    }
  } catch (const Json::exception& e) {
    throw DataError(dir.string() + "/predictions.json is malformed: " + e.what());
  }
  return p;
}

// ---- evaluation ----

inline std::string join_ids(const std::vector<std::size_t>& ids, std::size_t limit = 20) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) s += (i ? ", " : "") + std::to_string(ids[i]);
  if (ids.size() > limit) s += ", ... (" + std::to_string(ids.size()) + " total)";
  return s;
}

// Ground-truth instances of the listed scenes; every listed scene and every
// detection must exist in the dataset.
inline std::vector<GroundTruth> load_ground_truth(const std::filesystem::path& data_dir,
                                                  const DatasetIndex& idx,
                                                  const PredictionSet& preds) {
  std::set<std::size_t> known_scenes, known_dets;
  for (const auto& s : idx.scenes) {
    known_scenes.insert(s.id);
    for (const auto& d : s.detections) known_dets.insert(d.id);
  }
  std::vector<std::size_t> missing_scenes, missing_dets;
  std::set<std::size_t> listed(preds.scenes.begin(), preds.scenes.end());
  for (std::size_t s : preds.scenes)
    if (!known_scenes.count(s)) missing_scenes.push_back(s);
  for (const auto& d : preds.detections) {
    if (!known_dets.count(d.id)) missing_dets.push_back(d.id);
    if (!listed.count(d.scene)) missing_scenes.push_back(d.scene);
  }
  if (!missing_scenes.empty() || !missing_dets.empty()) {
    std::string msg = "predictions do not align with the dataset";
    if (!missing_scenes.empty()) msg += "; missing scene ids: " + join_ids(missing_scenes);
    if (!missing_dets.empty()) msg += "; unknown detection ids: " + join_ids(missing_dets);
    throw MismatchError(msg);
  }
  if (preds.scene_size != idx.scene_size)
    throw MismatchError("prediction scene size " + std::to_string(preds.scene_size) +
                        " differs from dataset scene size " + std::to_string(idx.scene_size));
  std::vector<GroundTruth> gts;
  for (std::size_t sid : preds.scenes) {
    const Scene scene = load_scene(data_dir, idx.scene(sid));
    for (const auto& inst : scene.instances) gts.push_back({sid, inst.category, inst.mask});
  }
  return gts;
}

// Greedy region NMS within each (scene, category).
inline std::vector<Detection> region_nms(const std::vector<Detection>& dets, double threshold) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dets.size(); ++i) groups[{dets[i].scene, dets[i].category}].push_back(i);
  std::vector<Detection> out;
  for (const auto& [key, members] : groups) {
    std::vector<ScoredItem> items;
    for (std::size_t i : members) items.push_back({dets[i].id, dets[i].score});
    const auto kept = nms(
        items,
        [&](std::size_t a, std::size_t b) {
          return mask_iou(dets[members[a]].region, dets[members[b]].region);
        },
        threshold);
    for (std::size_t k : kept) out.push_back(dets[members[k]]);
  }
  std::sort(out.begin(), out.end(),
            [](const Detection& a, const Detection& b) { return a.id < b.id; });
  return out;
}

// Pairs baseline and proposed detections by id; the id sets must agree.
inline ScatterSummary scatter_by_id(const std::vector<Detection>& baseline,
                                    const std::vector<Detection>& proposed,
                                    const std::vector<GroundTruth>& gts) {
  std::map<std::size_t, const Detection*> b, p;
  for (const auto& d : baseline) b[d.id] = &d;
  for (const auto& d : proposed) p[d.id] = &d;
  std::vector<std::size_t> only_b, only_p;
  for (const auto& [id, d] : b)
    if (!p.count(id)) only_b.push_back(id);
  for (const auto& [id, d] : p)
    if (!b.count(id)) only_p.push_back(id);
  if (!only_b.empty() || !only_p.empty()) {
    std::string msg = "baseline and proposed detections differ";
    if (!only_p.empty()) msg += "; missing from baseline: " + join_ids(only_p);
    if (!only_b.empty()) msg += "; missing from predictions: " + join_ids(only_b);
    throw MismatchError(msg);
  }
  std::vector<Detection> bs, ps;
  for (const auto& [id, d] : p) {
    ps.push_back(*d);
    bs.push_back(*b[id]);
  }
  return overlap_scatter(bs, ps, gts);
}

// ---- refinement analysis ----

struct RefinementStats {
  std::vector<double> mean_iou;           // index t = iteration, 0 unused
  std::vector<double> abutting_iou;
  std::vector<double> abutting_intrusion;
  std::size_t detections = 0;
  std::size_t abutting_detections = 0;
};

// Fraction of the region's foreground lying on another instance of the same
// category.
inline double intrusion_fraction(const Mask& region, const Scene& scene, std::size_t instance) {
  const std::size_t fg = count_foreground(region);
  if (fg == 0) return 0.0;
  std::size_t inside = 0;
  const std::size_t cat = scene.instances[instance].category;
  for (std::size_t j = 0; j < scene.instances.size(); ++j) {
    if (j == instance || scene.instances[j].category != cat) continue;
    const auto& m = scene.instances[j].mask.values;
    for (std::size_t q = 0; q < region.size(); ++q) inside += region.values[q] && m[q];
  }
  return static_cast<double>(inside) / static_cast<double>(fg);
}

// Every detection of the chosen scenes, refined for M steps; per step, IoU of
// the binarized pasted heatmap with the detection's own instance.
inline RefinementStats refinement_analysis(const SegNet& net,
                                           const std::filesystem::path& data_dir,
                                           const std::vector<const SceneRecord*>& scenes,
                                           std::size_t iterations,
                                           double threshold = kBinarizeThreshold) {
  RefinementStats st;
  st.mean_iou.assign(iterations + 1, 0.0);
  st.abutting_iou.assign(iterations + 1, 0.0);
  st.abutting_intrusion.assign(iterations + 1, 0.0);
  for (const SceneRecord* rec : scenes) {
    if (rec->detections.empty()) continue;
    const Scene scene = load_scene(data_dir, *rec);
    std::vector<RgbImage> patches;
    std::vector<std::size_t> cats;
    for (const auto& d : rec->detections) {
      patches.push_back(crop_resize(scene.image, d.bbox, net.arch().patch_size));
      cats.push_back(d.category);
    }
    std::vector<const RgbImage*> ptrs;
    for (const auto& p : patches) ptrs.push_back(&p);
    const auto traj = infer_many(net, ptrs, cats, iterations);
    for (std::size_t k = 0; k < rec->detections.size(); ++k) {
      const auto& d = rec->detections[k];
      const bool abut = rec->instances[d.instance].abuts_same_category;
      for (std::size_t t = 0; t <= iterations; ++t) {
        const Mask region = binarize(
            paste_heatmap(traj[k][t], d.bbox, scene.image.width, scene.image.height), threshold);
        const double iou = mask_iou(region, scene.instances[d.instance].mask);
        st.mean_iou[t] += iou;
        if (abut) {
          st.abutting_iou[t] += iou;
          st.abutting_intrusion[t] += intrusion_fraction(region, scene, d.instance);
        }
      }
      ++st.detections;
      st.abutting_detections += abut;
    }
  }
  for (std::size_t t = 0; t <= iterations; ++t) {
    if (st.detections) st.mean_iou[t] /= static_cast<double>(st.detections);
    if (st.abutting_detections) {
      st.abutting_iou[t] /= static_cast<double>(st.abutting_detections);
      st.abutting_intrusion[t] /= static_cast<double>(st.abutting_detections);
    }
  }
  return st;
}

}  // namespace iterseg
