#pragma once

// Run configuration: flat UTF-8 `key = value` text with `#` comments. Every
// key has a default; render() emits all keys in a fixed order so the
// effective configuration can be echoed and hashed.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iterseg/dataset.hpp"
#include "iterseg/engine.hpp"
#include "iterseg/error.hpp"
#include "iterseg/model.hpp"
#include "iterseg/postprocess.hpp"

namespace iterseg {

struct EvalConfig {
  std::size_t iterations = kDefaultTestIterations;
  bool superpixels = false;
  SuperpixelOptions superpixel;
  double binarize_threshold = kBinarizeThreshold;
  double box_nms_threshold = kBoxNmsThreshold;
  double region_nms_threshold = kRegionNmsThreshold;
  std::vector<double> thresholds{0.5, 0.7};
};

struct RunConfig {
  ArchDescriptor arch;
  StageSchedule schedule;
  DatasetConfig data;
  EvalConfig eval;
  std::uint64_t seed = 1;

  // Dataset patch geometry follows the architecture.
  DatasetConfig dataset_config() const {
    DatasetConfig d = data;
    d.patch_size = arch.patch_size;
    d.heatmap_size = arch.heatmap_size;
    d.scene.num_categories = arch.num_categories;
    return d;
  }

  void validate() const {
    arch.validate();
    schedule.validate();
    dataset_config().scene.validate();
    if (eval.thresholds.empty()) throw ConfigError("eval_thresholds must not be empty");
    for (double t : eval.thresholds)
      if (!(t >= 0.0 && t < 1.0)) throw ConfigError("eval thresholds must lie in [0, 1)");
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
      throw ConfigError("train_fraction must lie in (0, 1)");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(std::size_t v) { return std::to_string(v); }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  if (trim(v).empty()) return parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected on/off, got '" + v + "'");
}

}  // namespace detail

// Applies one key. Unknown keys are errors.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  auto size = [&] { return static_cast<std::size_t>(parse_u64(key, v)); };
  auto sizes = [&] {
    std::vector<std::size_t> out;
    for (const auto& p : split_list(v)) out.push_back(static_cast<std::size_t>(parse_u64(key, p)));
    return out;
  };
  auto doubles = [&] {
    std::vector<double> out;
    for (const auto& p : split_list(v)) out.push_back(parse_double(key, p));
    return out;
  };
  auto set_blocks = [&](bool channels) {
    const auto vals = sizes();
    if (c.arch.blocks.size() != vals.size()) c.arch.blocks.resize(vals.size(), BlockSpec{1, 1});
    for (std::size_t i = 0; i < vals.size(); ++i)
      (channels ? c.arch.blocks[i].channels : c.arch.blocks[i].stride) = vals[i];
  };

  if (key == "patch_size") c.arch.patch_size = size();
  else if (key == "heatmap_size") c.arch.heatmap_size = size();
  else if (key == "num_categories") c.arch.num_categories = size();
  else if (key == "kernel_size") c.arch.kernel_size = size();
  else if (key == "block_channels") set_blocks(true);
  else if (key == "block_strides") set_blocks(false);
  else if (key == "head_width") c.arch.head_width = size();
  else if (key == "stage_iterations") c.schedule.iterations_per_stage = sizes();
  else if (key == "batch_size") c.schedule.batch_size = size();
  else if (key == "learning_rate") c.schedule.learning_rate = parse_double(key, v);
  else if (key == "momentum") c.schedule.momentum = parse_double(key, v);
  else if (key == "scene_size") c.data.scene.scene_size = size();
  else if (key == "num_scenes") c.data.num_scenes = size();
  else if (key == "min_instances") c.data.scene.min_instances = size();
  else if (key == "max_instances") c.data.scene.max_instances = size();
  else if (key == "overlap_rate") c.data.scene.overlap_rate = parse_double(key, v);
  else if (key == "pair_penetration") c.data.scene.pair_penetration = parse_double(key, v);
  else if (key == "category_mix") c.data.scene.category_mix = doubles();
  else if (key == "min_half_size") c.data.scene.min_half_size = parse_double(key, v);
  else if (key == "max_half_size") c.data.scene.max_half_size = parse_double(key, v);
  else if (key == "color_jitter") c.data.scene.color_jitter = parse_double(key, v);
  else if (key == "pixel_noise") c.data.scene.pixel_noise = parse_double(key, v);
  else if (key == "jitter_boxes") c.data.jitter.boxes_per_instance = size();
  else if (key == "jitter_shift") c.data.jitter.max_shift = parse_double(key, v);
  else if (key == "jitter_scale") c.data.jitter.max_scale = parse_double(key, v);
  else if (key == "jitter_min_iou") c.data.jitter.min_iou = parse_double(key, v);
  else if (key == "train_fraction") c.data.train_fraction = parse_double(key, v);
  else if (key == "iterations") c.eval.iterations = size();
  else if (key == "superpixels") c.eval.superpixels = parse_bool(key, v);
  else if (key == "superpixel_count") c.eval.superpixel.count = size();
  else if (key == "superpixel_compactness") c.eval.superpixel.compactness = parse_double(key, v);
  else if (key == "superpixel_iterations") c.eval.superpixel.iterations = size();
  else if (key == "binarize_threshold") c.eval.binarize_threshold = parse_double(key, v);
  else if (key == "box_nms_threshold") c.eval.box_nms_threshold = parse_double(key, v);
  else if (key == "region_nms_threshold") c.eval.region_nms_threshold = parse_double(key, v);
  else if (key == "eval_thresholds") c.eval.thresholds = doubles();
  else if (key == "seed") c.seed = parse_u64(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path));
}

// Canonical text of every key; parse_config(render_config(c)) == c.
inline std::string render_config(const RunConfig& c) {
  using detail::fmt;
  using detail::fmt_list;
  std::vector<std::size_t> channels, strides;
  for (const auto& b : c.arch.blocks) {
    channels.push_back(b.channels);
    strides.push_back(b.stride);
  }
  std::ostringstream o;
  o << "# architecture\n"
    << "patch_size = " << c.arch.patch_size << "\n"
    << "heatmap_size = " << c.arch.heatmap_size << "\n"
    << "num_categories = " << c.arch.num_categories << "\n"
    << "kernel_size = " << c.arch.kernel_size << "\n"
    << "block_channels = " << fmt_list(channels) << "\n"
    << "block_strides = " << fmt_list(strides) << "\n"
    << "head_width = " << c.arch.head_width << "\n"
    << "# schedule\n"
    << "stage_iterations = " << fmt_list(c.schedule.iterations_per_stage) << "\n"
    << "batch_size = " << c.schedule.batch_size << "\n"
    << "learning_rate = " << fmt(c.schedule.learning_rate) << "\n"
    << "momentum = " << fmt(c.schedule.momentum) << "\n"
    << "# data\n"
    << "scene_size = " << c.data.scene.scene_size << "\n"
    << "num_scenes = " << c.data.num_scenes << "\n"
    << "min_instances = " << c.data.scene.min_instances << "\n"
    << "max_instances = " << c.data.scene.max_instances << "\n"
    << "overlap_rate = " << fmt(c.data.scene.overlap_rate) << "\n"
    << "pair_penetration = " << fmt(c.data.scene.pair_penetration) << "\n"
    << "category_mix = " << fmt_list(c.data.scene.category_mix) << "\n"
    << "min_half_size = " << fmt(c.data.scene.min_half_size) << "\n"
    << "max_half_size = " << fmt(c.data.scene.max_half_size) << "\n"
    << "color_jitter = " << fmt(c.data.scene.color_jitter) << "\n"
    << "pixel_noise = " << fmt(c.data.scene.pixel_noise) << "\n"
    << "jitter_boxes = " << c.data.jitter.boxes_per_instance << "\n"
    << "jitter_shift = " << fmt(c.data.jitter.max_shift) << "\n"
    << "jitter_scale = " << fmt(c.data.jitter.max_scale) << "\n"
    << "jitter_min_iou = " << fmt(c.data.jitter.min_iou) << "\n"
    << "train_fraction = " << fmt(c.data.train_fraction) << "\n"
    << "# evaluation\n"
    << "iterations = " << c.eval.iterations << "\n"
    << "superpixels = " << (c.eval.superpixels ? "on" : "off") << "\n"
    << "superpixel_count = " << c.eval.superpixel.count << "\n"
    << "superpixel_compactness = " << fmt(c.eval.superpixel.compactness) << "\n"
    << "superpixel_iterations = " << c.eval.superpixel.iterations << "\n"
    << "binarize_threshold = " << fmt(c.eval.binarize_threshold) << "\n"
    << "box_nms_threshold = " << fmt(c.eval.box_nms_threshold) << "\n"
    << "region_nms_threshold = " << fmt(c.eval.region_nms_threshold) << "\n"
    << "eval_thresholds = " << fmt_list(c.eval.thresholds) << "\n"
    << "# seeds\n"
    << "seed = " << c.seed << "\n";
  return o.str();
}

}  // namespace iterseg
