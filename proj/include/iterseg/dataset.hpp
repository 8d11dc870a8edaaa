#pragma once

// On-disk dataset: scenes/<id>.ppm, scenes/<id>.labels.pgm, patches/<id>.ppm,
// patches/<id>.mask.pgm, index.json and manifest.json.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"
#include "iterseg/image_io.hpp"
#include "iterseg/model.hpp"
#include "iterseg/synth.hpp"
#include "iterseg/util.hpp"

namespace iterseg {

using Json = nlohmann::json;

struct DatasetConfig {
  SceneConfig scene;
  JitterConfig jitter;
  std::size_t num_scenes = 500;
  double train_fraction = 0.8;
  std::size_t patch_size = 64;
  std::size_t heatmap_size = 32;
};

enum class Split { train, val };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw DataError("unknown split '" + s + "'");
}

// Partition by a hash of the scene id alone.
inline Split split_for_scene(std::size_t scene_id, double train_fraction) {
  const double u = static_cast<double>(splitmix64(scene_id) % 1000000) / 1e6;
  return u < train_fraction ? Split::train : Split::val;
}

struct InstanceRecord {
  std::size_t category = 0;
  Box bbox;
  int z_order = 0;
  bool abuts_same_category = false;
};

struct DetectionRecord {
  std::size_t id = 0;  // equals the sample id of its patch
  std::size_t instance = 0;
  Box bbox;
  double score = 0.0;
  std::size_t category = 0;
};

struct SceneRecord {
  std::size_t id = 0;
  Split split = Split::train;
  std::uint64_t seed = 0;
  bool forced_pair = false;
  std::vector<InstanceRecord> instances;
  std::vector<DetectionRecord> detections;
};

struct SampleRecord {
  std::size_t id = 0;
  std::size_t scene = 0;
  std::size_t instance = 0;
  std::size_t category = 0;
  Box bbox;
  double area_weight = 1.0;
  Split split = Split::train;
};

struct DatasetIndex {
  std::size_t scene_size = 0;
  std::size_t patch_size = 0;
  std::size_t heatmap_size = 0;
  std::size_t num_categories = 0;
  std::vector<SceneRecord> scenes;
  std::vector<SampleRecord> samples;

  const SceneRecord& scene(std::size_t id) const {
    for (const auto& s : scenes)
      if (s.id == id) return s;
    throw DataError("scene " + std::to_string(id) + " not in index");
  }
};

namespace paths {
inline std::string scene_image(std::size_t id) { return "scenes/" + zero_pad(id) + ".ppm"; }
inline std::string scene_labels(std::size_t id) {
  return "scenes/" + zero_pad(id) + ".labels.pgm";
}
inline std::string patch_image(std::size_t id) { return "patches/" + zero_pad(id) + ".ppm"; }
inline std::string patch_mask(std::size_t id) {
  return "patches/" + zero_pad(id) + ".mask.pgm";
}
}  // namespace paths

inline Json box_json(const Box& b) { return Json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be a 4-element array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

inline Json index_to_json(const DatasetIndex& idx) {
  Json scenes = Json::array();
  for (const auto& s : idx.scenes) {
    Json insts = Json::array();
    for (const auto& i : s.instances)
      insts.push_back({{"category", i.category},
                       {"bbox", box_json(i.bbox)},
                       {"z_order", i.z_order},
                       {"abuts_same_category", i.abuts_same_category}});
    Json dets = Json::array();
    for (const auto& d : s.detections)
      dets.push_back({{"id", d.id},
                      {"instance", d.instance},
                      {"bbox", box_json(d.bbox)},
                      {"score", d.score},
                      {"category", d.category}});
    scenes.push_back({{"id", s.id},
                      {"split", to_string(s.split)},
                      {"seed", s.seed},
                      {"forced_pair", s.forced_pair},
                      {"image", paths::scene_image(s.id)},
                      {"labels", paths::scene_labels(s.id)},
                      {"instances", std::move(insts)},
                      {"detections", std::move(dets)}});
  }
  Json samples = Json::array();
  for (const auto& s : idx.samples)
    samples.push_back({{"id", s.id},
                       {"scene", s.scene},
                       {"instance", s.instance},
                       {"category", s.category},
                       {"bbox", box_json(s.bbox)},
                       {"area_weight", s.area_weight},
                       {"split", to_string(s.split)},
                       {"patch", paths::patch_image(s.id)},
                       {"mask", paths::patch_mask(s.id)}});
  return {{"scene_size", idx.scene_size},
          {"patch_size", idx.patch_size},
          {"heatmap_size", idx.heatmap_size},
          {"num_categories", idx.num_categories},
          {"scenes", std::move(scenes)},
          {"samples", std::move(samples)}};
}

inline DatasetIndex index_from_json(const Json& j) {
  DatasetIndex idx;
  try {
    idx.scene_size = j.at("scene_size").get<std::size_t>();
    idx.patch_size = j.at("patch_size").get<std::size_t>();
    idx.heatmap_size = j.at("heatmap_size").get<std::size_t>();
    idx.num_categories = j.at("num_categories").get<std::size_t>();
    for (const auto& s : j.at("scenes")) {
      SceneRecord r;
      r.id = s.at("id").get<std::size_t>();
      r.split = parse_split(s.at("split").get<std::string>());
      r.seed = s.at("seed").get<std::uint64_t>();
      r.forced_pair = s.at("forced_pair").get<bool>();
      for (const auto& i : s.at("instances"))
        r.instances.push_back({i.at("category").get<std::size_t>(), box_from_json(i.at("bbox")),
                               i.at("z_order").get<int>(),
                               i.at("abuts_same_category").get<bool>()});
      for (const auto& d : s.at("detections"))
        r.detections.push_back({d.at("id").get<std::size_t>(),
                                d.at("instance").get<std::size_t>(),
                                box_from_json(d.at("bbox")), d.at("score").get<double>(),
                                d.at("category").get<std::size_t>()});
      idx.scenes.push_back(std::move(r));
    }
    for (const auto& s : j.at("samples"))
      idx.samples.push_back({s.at("id").get<std::size_t>(), s.at("scene").get<std::size_t>(),
                             s.at("instance").get<std::size_t>(),
                             s.at("category").get<std::size_t>(), box_from_json(s.at("bbox")),
                             s.at("area_weight").get<double>(),
                             parse_split(s.at("split").get<std::string>())});
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed dataset index: ") + e.what());
  }
  return idx;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct DatasetSummary {
  DatasetIndex index;
  GenerationReport report;
};

// Generates every scene, its simulated detections and one patch per
// detection, then writes the directory. `config_echo` is embedded verbatim in
// the manifest.
inline DatasetSummary build_dataset(const DatasetConfig& cfg, std::uint64_t seed,
                                    const std::filesystem::path& out_dir,
                                    const Json& config_echo = Json::object()) {
  cfg.scene.validate();
  if (cfg.num_scenes == 0) throw ConfigError("num_scenes must be positive");
  ArchDescriptor arch;
  arch.patch_size = cfg.patch_size;
  arch.heatmap_size = cfg.heatmap_size;
  arch.num_categories = cfg.scene.num_categories;

  ensure_directory(out_dir / "scenes");
  ensure_directory(out_dir / "patches");

  DatasetSummary out;
  DatasetIndex& idx = out.index;
  idx.scene_size = cfg.scene.scene_size;
  idx.patch_size = cfg.patch_size;
  idx.heatmap_size = cfg.heatmap_size;
  idx.num_categories = cfg.scene.num_categories;

  std::vector<PatchSample> patches;
  for (std::size_t id = 0; id < cfg.num_scenes; ++id) {
    const std::uint64_t s_seed = scene_seed(seed, id);
    Scene scene = generate_scene(cfg.scene, s_seed, &out.report);
    std::mt19937_64 det_rng(splitmix64(s_seed ^ 0xd1b54a32d192ed03ULL));
    const auto dets = simulate_detections(scene, cfg.jitter, det_rng);
    const auto abut = abutting_instances(scene);

    SceneRecord rec;
    rec.id = id;
    rec.split = split_for_scene(id, cfg.train_fraction);
    rec.seed = s_seed;
    rec.forced_pair = scene.forced_pair;
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      const Instance& inst = scene.instances[i];
      rec.instances.push_back({inst.category, inst.bbox, inst.z_order, abut[i]});
    }
    for (const auto& d : dets) {
      const std::size_t sid = patches.size();
      rec.detections.push_back({sid, d.instance, d.bbox, d.score, d.category});
      PatchSample p = extract_patch(scene, d.bbox, d.instance, arch);
      p.sample_id = sid;
      p.scene_id = id;
      patches.push_back(std::move(p));
      idx.samples.push_back({sid, id, d.instance, d.category, d.bbox, 0.0, rec.split});
    }
    write_ppm(out_dir / paths::scene_image(id), scene.image);
    write_pgm(out_dir / paths::scene_labels(id), label_map(scene));
    idx.scenes.push_back(std::move(rec));
  }

  // Area weights relative to the mean training-box area.
  double area_sum = 0.0;
  std::size_t train_count = 0;
  for (const auto& s : idx.samples)
    if (s.split == Split::train) {
      area_sum += static_cast<double>(s.bbox.area());
      ++train_count;
    }
  if (train_count == 0) throw DataError("training split is empty; raise num_scenes");
  const double mean_area = area_sum / static_cast<double>(train_count);
  for (auto& s : idx.samples) s.area_weight = static_cast<double>(s.bbox.area()) / mean_area;

  for (const auto& p : patches) {
    write_ppm(out_dir / paths::patch_image(p.sample_id), p.patch);
    write_mask_pgm(out_dir / paths::patch_mask(p.sample_id), p.gt_mask);
  }

  std::map<std::string, std::size_t> per_category, instances_per_category;
  std::size_t train_scenes = 0, val_scenes = 0, train_patches = 0, abutting_scenes = 0;
  std::size_t abutting_val_instances = 0;
  for (const auto& s : idx.samples) {
    ++per_category[std::string(kShapeFamilyNames[s.category])];
    train_patches += s.split == Split::train;
  }
  for (const auto& s : idx.scenes) {
    (s.split == Split::train ? train_scenes : val_scenes)++;
    bool any = false;
    for (const auto& i : s.instances) {
      ++instances_per_category[std::string(kShapeFamilyNames[i.category])];
      any = any || i.abuts_same_category;
      if (s.split == Split::val && i.abuts_same_category) ++abutting_val_instances;
    }
    abutting_scenes += any;
  }
  Json manifest = {
      {"format", "iterseg-dataset"},
      {"version", 1},
      {"seed", seed},
      {"config", config_echo},
      {"num_categories", cfg.scene.num_categories},
      {"counts",
       {{"scenes", {{"train", train_scenes}, {"val", val_scenes}}},
        {"patches",
         {{"train", train_patches},
          {"val", idx.samples.size() - train_patches},
          {"total", idx.samples.size()}}},
        {"patches_per_category", per_category},
        {"instances_per_category", instances_per_category},
        {"abutting_scenes", abutting_scenes},
        {"abutting_val_instances", abutting_val_instances}}},
      {"generation",
       {{"regenerated_scenes", out.report.regenerated_scenes},
        {"rejected_placements", out.report.rejected_placements}}}};
  write_text(out_dir / "index.json", index_to_json(idx).dump(1) + "\n");
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

inline DatasetIndex load_index(const std::filesystem::path& dir) {
  return index_from_json(read_json(dir / "index.json"));
}

// Rebuilds image and visible instance masks from the label map.
inline Scene load_scene(const std::filesystem::path& dir, const SceneRecord& rec) {
  Scene s;
  s.image = read_ppm(dir / paths::scene_image(rec.id));
  const auto labels = read_pgm(dir / paths::scene_labels(rec.id));
  if (labels.width != s.image.width || labels.height != s.image.height)
    throw DataError("label map size differs from image for scene " + std::to_string(rec.id));
  s.seed = rec.seed;
  s.forced_pair = rec.forced_pair;
  for (std::size_t i = 0; i < rec.instances.size(); ++i) {
    Instance inst;
    inst.category = rec.instances[i].category;
    inst.z_order = rec.instances[i].z_order;
    inst.bbox = rec.instances[i].bbox;
    inst.mask = Mask(labels.width, labels.height);
    for (std::size_t p = 0; p < labels.size(); ++p)
      inst.mask.values[p] = labels.values[p] == i + 1 ? 1 : 0;
    s.instances.push_back(std::move(inst));
  }
  return s;
}

inline std::vector<PatchSample> load_samples(const std::filesystem::path& dir,
                                             const DatasetIndex& idx, Split split) {
  std::vector<PatchSample> out;
  for (const auto& r : idx.samples) {
    if (r.split != split) continue;
    PatchSample p;
    p.sample_id = r.id;
    p.patch = read_ppm(dir / paths::patch_image(r.id));
    p.gt_mask = read_mask_pgm(dir / paths::patch_mask(r.id));
    p.category = r.category;
    p.area_weight = r.area_weight;
    p.scene_id = r.scene;
    p.instance = r.instance;
    p.bbox = r.bbox;
    if (p.patch.width != idx.patch_size || p.gt_mask.width != idx.heatmap_size)
      throw DataError("patch " + std::to_string(r.id) + " has unexpected dimensions");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace iterseg
