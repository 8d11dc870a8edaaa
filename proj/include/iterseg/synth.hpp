#pragma once

// Procedural shape world: scenes of category-specific shapes drawn from a
// shared colour palette, with forced abutting same-category pairs, simulated
// detection boxes and patch extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"
#include "iterseg/model.hpp"
#include "iterseg/nn.hpp"
#include "iterseg/util.hpp"

namespace iterseg {

inline constexpr std::size_t kNumShapeFamilies = 4;
inline constexpr std::array<std::string_view, kNumShapeFamilies> kShapeFamilyNames{
    "snowman", "bar", "ring", "tee"};

struct SceneConfig {
  std::size_t scene_size = 128;
  std::size_t num_categories = 4;
  std::size_t min_instances = 2;
  std::size_t max_instances = 3;
  // Fraction of scenes built around an abutting same-category pair.
  double overlap_rate = 0.6;
  // The forced pair keeps sliding past contact by up to this fraction of the
  // moving shape's half-extent, so one partly occludes the other.
  double pair_penetration = 0.0;
  // Relative category frequencies; empty means uniform.
  std::vector<double> category_mix;
  // Half-extent of a shape in pixels.
  double min_half_size = 13.0;
  double max_half_size = 22.0;
  double color_jitter = 10.0;
  double pixel_noise = 12.0;
  std::size_t min_visible_pixels = 60;
  double min_visible_fraction = 0.5;
  std::size_t max_placement_tries = 60;
  std::size_t max_scene_attempts = 50;

  void validate() const {
    if (scene_size < 16) throw ConfigError("scene_size must be >= 16");
    if (num_categories < 1 || num_categories > kNumShapeFamilies)
      throw ConfigError("num_categories must lie in [1, " +
                        std::to_string(kNumShapeFamilies) + "]");
    if (min_instances < 1 || max_instances < min_instances)
      throw ConfigError("instance count range is empty");
    if (!(overlap_rate >= 0.0 && overlap_rate <= 1.0))
      throw ConfigError("overlap_rate must lie in [0, 1]");
    if (!(pair_penetration >= 0.0 && pair_penetration <= 1.0))
      throw ConfigError("pair_penetration must lie in [0, 1]");
    if (!category_mix.empty()) {
      if (category_mix.size() != num_categories)
        throw ConfigError("category_mix needs one entry per category");
      double total = 0.0;
      for (double w : category_mix) {
        if (!(w >= 0.0)) throw ConfigError("category_mix entries must be >= 0");
        total += w;
      }
      if (!(total > 0.0)) throw ConfigError("category_mix must not be all zero");
    }
    if (!(min_half_size > 2.0 && max_half_size >= min_half_size))
      throw ConfigError("shape size range is invalid");
    if (2.0 * max_half_size >= static_cast<double>(scene_size))
      throw ConfigError("shapes do not fit in the scene");
  }

  std::vector<double> mix() const {
    return category_mix.empty() ? std::vector<double>(num_categories, 1.0)
                                : category_mix;
  }
};

struct ShapePlacement {
  std::size_t family = 0;
  double cx = 0.0;
  double cy = 0.0;
  double half_size = 1.0;
  double aspect = 1.0;  // horizontal stretch in the local frame
  double angle = 0.0;
};

// Membership in unit local coordinates; v grows downwards.
inline bool shape_contains(std::size_t family, double u, double v) {
  switch (family) {
    case 0: {  // snowman: body disk with a smaller head on top
      const double body = u * u + (v - 0.35) * (v - 0.35);
      const double head = u * u + (v + 0.55) * (v + 0.55);
      return body <= 0.62 * 0.62 || head <= 0.42 * 0.42;
    }
    case 1:  // bar
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.28;
    case 2: {  // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case 3:  // tee: cap plus stem
      return (std::abs(u) <= 1.0 && v >= -1.0 && v <= -0.45) ||
             (std::abs(u) <= 0.27 && v >= -0.45 && v <= 1.0);
    default:
      return false;
  }
}

inline Mask rasterize(const ShapePlacement& s, std::size_t size) {
  Mask m(size, size);
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double reach = s.half_size * std::max(1.0, s.aspect) * 1.5;
  const auto lo = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v - reach), 0.0, double(size)));
  };
  const auto hi = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v + reach), 0.0, double(size)));
  };
  for (std::size_t y = lo(s.cy); y < hi(s.cy); ++y) {
    for (std::size_t x = lo(s.cx); x < hi(s.cx); ++x) {
      const double dx = static_cast<double>(x) + 0.5 - s.cx;
      const double dy = static_cast<double>(y) + 0.5 - s.cy;
      const double u = (c * dx + sn * dy) / (s.half_size * s.aspect);
      const double v = (-sn * dx + c * dy) / s.half_size;
      if (shape_contains(s.family, u, v)) m(x, y) = 1;
    }
  }
  return m;
}

struct Instance {
  std::size_t category = 0;
  Mask mask;  // visible pixels at scene resolution
  Box bbox;
  int z_order = 0;
};

struct Scene {
  RgbImage image;
  std::vector<Instance> instances;
  std::uint64_t seed = 0;
  bool forced_pair = false;
};

struct GenerationReport {
  std::size_t regenerated_scenes = 0;  // attempts abandoned after bounded retries
  std::size_t rejected_placements = 0;
};

// True when some pixel of `a` is 4-adjacent to (or coincides with) one of `b`.
inline bool masks_touch(const Mask& a, const Mask& b) {
  const std::size_t w = a.width, h = a.height;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!a(x, y)) continue;
      if (b(x, y) || (x > 0 && b(x - 1, y)) || (x + 1 < w && b(x + 1, y)) ||
          (y > 0 && b(x, y - 1)) || (y + 1 < h && b(x, y + 1)))
        return true;
    }
  return false;
}

// Pairs (i, j), i < j, of same-category instances whose visible masks abut.
inline std::vector<std::pair<std::size_t, std::size_t>> abutting_pairs(const Scene& s) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < s.instances.size(); ++i)
    for (std::size_t j = i + 1; j < s.instances.size(); ++j)
      if (s.instances[i].category == s.instances[j].category &&
          masks_touch(s.instances[i].mask, s.instances[j].mask))
        pairs.emplace_back(i, j);
  return pairs;
}

inline std::vector<bool> abutting_instances(const Scene& s) {
  std::vector<bool> flags(s.instances.size(), false);
  for (auto [i, j] : abutting_pairs(s)) flags[i] = flags[j] = true;
  return flags;
}

// Label map with value instance index + 1, 0 for background.
inline Grid<std::uint8_t> label_map(const Scene& s) {
  const std::size_t n = s.image.width;
  Grid<std::uint8_t> labels(n, n);
  for (std::size_t i = 0; i < s.instances.size(); ++i)
    for (std::size_t p = 0; p < labels.size(); ++p)
      if (s.instances[i].mask.values[p]) labels.values[p] = static_cast<std::uint8_t>(i + 1);
  return labels;
}

namespace detail {

inline constexpr std::array<std::array<double, 3>, 6> kPalette{{
    {200, 60, 60}, {60, 170, 70}, {70, 90, 200},
    {210, 180, 50}, {170, 70, 190}, {60, 180, 190}}};

inline std::size_t sample_category(const std::vector<double>& mix, std::mt19937_64& rng) {
  std::discrete_distribution<std::size_t> d(mix.begin(), mix.end());
  return d(rng);
}

inline double sample_angle(std::size_t family, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> full(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> tilt(-0.35, 0.35);
  return family == 0 ? tilt(rng) : full(rng);
}

inline bool in_frame(const ShapePlacement& s, double size) {
  const double margin = s.half_size * 0.8;
  return s.cx >= margin && s.cy >= margin && s.cx <= size - margin &&
         s.cy <= size - margin;
}

inline Mask dilate4(const Mask& m) {
  Mask d = m;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m(x, y)) continue;
      if (x > 0) d(x - 1, y) = 1;
      if (x + 1 < m.width) d(x + 1, y) = 1;
      if (y > 0) d(x, y - 1) = 1;
      if (y + 1 < m.height) d(x, y + 1) = 1;
    }
  return d;
}

inline bool any_overlap(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.values[i] && b.values[i]) return true;
  return false;
}

struct AttemptResult {
  bool ok = false;
  Scene scene;
};

// One generation attempt; fails when any placement exhausts its retries.
inline AttemptResult attempt_scene(const SceneConfig& cfg, std::mt19937_64& rng,
                                   GenerationReport& report) {
  const std::size_t size = cfg.scene_size;
  const double fsize = static_cast<double>(size);
  const auto mix = cfg.mix();
  std::bernoulli_distribution force(cfg.overlap_rate);
  const bool pair = force(rng);
  std::uniform_int_distribution<std::size_t> count(cfg.min_instances, cfg.max_instances);
  const std::size_t n = std::max<std::size_t>(count(rng), pair ? 2 : 1);

  std::vector<std::size_t> cats(n);
  for (auto& c : cats) c = sample_category(mix, rng);
  if (pair) cats[1] = cats[0];

  std::uniform_real_distribution<double> half(cfg.min_half_size, cfg.max_half_size);
  std::uniform_real_distribution<double> aspect(0.85, 1.15);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);

  std::vector<ShapePlacement> placements;
  std::vector<Mask> full;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t t = 0; t < cfg.max_placement_tries && !placed; ++t) {
      ShapePlacement s;
      s.family = cats[i];
      s.aspect = aspect(rng);
      s.angle = sample_angle(s.family, rng);
      if (pair && i == 1) {
        // Slide towards instance 0 along a random direction until contact.
        const ShapePlacement& a = placements[0];
        s.half_size = std::clamp(a.half_size * (0.85 + 0.3 * unit(rng)),
                                 cfg.min_half_size, cfg.max_half_size);
        const double phi = angle(rng);
        const Mask target = dilate4(full[0]);
        double d = 1.8 * (a.half_size + s.half_size);
        Mask m;
        bool contact = false;
        for (; d > 0.0; d -= 0.5) {
          s.cx = a.cx + d * std::cos(phi);
          s.cy = a.cy + d * std::sin(phi);
          m = rasterize(s, size);
          if (any_overlap(m, target)) {
            contact = true;
            break;
          }
        }
        if (contact && cfg.pair_penetration > 0.0) {
          d -= unit(rng) * cfg.pair_penetration * s.half_size;
          s.cx = a.cx + d * std::cos(phi);
          s.cy = a.cy + d * std::sin(phi);
          m = rasterize(s, size);
        }
        if (!contact || !in_frame(s, fsize) || count_foreground(m) == 0) {
          ++report.rejected_placements;
          continue;
        }
        placements.push_back(s);
        full.push_back(std::move(m));
        placed = true;
      } else {
        s.half_size = half(rng);
        std::uniform_real_distribution<double> pos(s.half_size * 0.8,
                                                   fsize - s.half_size * 0.8);
        s.cx = pos(rng);
        s.cy = pos(rng);
        Mask m = rasterize(s, size);
        // Free instances must not swallow an earlier shape's centre region.
        bool clash = false;
        for (const Mask& other : full) {
          std::size_t inter = 0, mine = count_foreground(m);
          for (std::size_t p = 0; p < m.size(); ++p) inter += m.values[p] && other.values[p];
          if (mine == 0 || inter * 4 > mine) clash = true;
        }
        if (clash) {
          ++report.rejected_placements;
          continue;
        }
        placements.push_back(s);
        full.push_back(std::move(m));
        placed = true;
      }
    }
    if (!placed) return {};
  }

  // Later placements are drawn on top; the forced pair's stacking is random.
  std::vector<int> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = static_cast<int>(i);
  if (pair && unit(rng) < 0.5) std::swap(z[0], z[1]);

  Scene scene;
  scene.forced_pair = pair;
  scene.instances.resize(n);
  std::vector<int> owner(size * size, -1);
  for (std::size_t p = 0; p < owner.size(); ++p) {
    int best_z = -1;
    for (std::size_t i = 0; i < n; ++i)
      if (full[i].values[p] && z[i] > best_z) {
        best_z = z[i];
        owner[p] = static_cast<int>(i);
      }
  }
  for (std::size_t i = 0; i < n; ++i) {
    Instance& inst = scene.instances[i];
    inst.category = cats[i];
    inst.z_order = z[i];
    inst.mask = Mask(size, size);
    for (std::size_t p = 0; p < owner.size(); ++p)
      if (owner[p] == static_cast<int>(i)) inst.mask.values[p] = 1;
    const std::size_t visible = count_foreground(inst.mask);
    const std::size_t total = count_foreground(full[i]);
    if (visible < cfg.min_visible_pixels ||
        static_cast<double>(visible) < cfg.min_visible_fraction * static_cast<double>(total))
      return {};
    inst.bbox = tight_box(inst.mask);
  }
  if (pair && !masks_touch(scene.instances[0].mask, scene.instances[1].mask)) return {};

  // Colours: palette entry per instance (shared by the forced pair), jitter,
  // then per-pixel noise over everything.
  std::uniform_int_distribution<std::size_t> pick(0, kPalette.size() - 1);
  std::normal_distribution<double> jitter(0.0, cfg.color_jitter);
  std::vector<std::array<double, 3>> colors(n);
  std::vector<std::size_t> palette_index(n);
  for (std::size_t i = 0; i < n; ++i) {
    palette_index[i] = (pair && i == 1) ? palette_index[0] : pick(rng);
    for (std::size_t c = 0; c < 3; ++c)
      colors[i][c] = kPalette[palette_index[i]][c] + jitter(rng);
  }
  std::uniform_real_distribution<double> gray(80.0, 150.0);
  std::normal_distribution<double> tint(0.0, 8.0);
  const double g = gray(rng);
  const std::array<double, 3> background{g + tint(rng), g + tint(rng), g + tint(rng)};

  std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
  scene.image = RgbImage(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const int o = owner[y * size + x];
      const auto& base = o < 0 ? background : colors[static_cast<std::size_t>(o)];
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::round(base[c] + noise(rng));
        scene.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  return {true, std::move(scene)};
}

}  // namespace detail

inline std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t scene_id) {
  return dataset_seed ^ static_cast<std::uint64_t>(scene_id);
}

// Deterministic per seed. Attempts that exhaust their placement retries are
// dropped and regenerated from the same stream, counted in `report`.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed,
                            GenerationReport* report = nullptr) {
  cfg.validate();
  GenerationReport local;
  GenerationReport& rep = report ? *report : local;
  std::mt19937_64 rng(splitmix64(seed));
  for (std::size_t a = 0; a < cfg.max_scene_attempts; ++a) {
    auto r = detail::attempt_scene(cfg, rng, rep);
    if (r.ok) {
      r.scene.seed = seed;
      return std::move(r.scene);
    }
    ++rep.regenerated_scenes;
  }
  throw DataError("scene generation failed after " +
                  std::to_string(cfg.max_scene_attempts) + " attempts (seed " +
                  std::to_string(seed) + ")");
}

struct JitterConfig {
  std::size_t boxes_per_instance = 1;  // jittered boxes in addition to the GT box
  double max_shift = 0.15;             // fraction of box width/height
  double max_scale = 0.15;             // log-uniform scale range per axis
  double min_iou = 0.7;                // strict lower bound on box IoU with GT
  std::size_t max_tries = 100;
};

struct SimulatedDetection {
  Box bbox;
  double score = 0.0;
  std::size_t category = 0;
  std::size_t instance = 0;
};

// The GT box plus jittered copies whose IoU with it exceeds min_iou. Scores
// fall with jitter magnitude (1 - IoU).
inline std::vector<SimulatedDetection> simulate_detections(const Scene& scene,
                                                           const JitterConfig& cfg,
                                                           std::mt19937_64& rng) {
  std::vector<SimulatedDetection> dets;
  const int size = static_cast<int>(scene.image.width);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> score_noise(0.9, 1.0);
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const Instance& inst = scene.instances[i];
    const Box& gt = inst.bbox;
    dets.push_back({gt, score_noise(rng), inst.category, i});
    for (std::size_t k = 0; k < cfg.boxes_per_instance; ++k) {
      for (std::size_t t = 0; t < cfg.max_tries; ++t) {
        const double w = gt.width(), h = gt.height();
        const double cx = gt.x0 + w / 2.0 + unit(rng) * cfg.max_shift * w;
        const double cy = gt.y0 + h / 2.0 + unit(rng) * cfg.max_shift * h;
        const double nw = w * std::exp(unit(rng) * cfg.max_scale);
        const double nh = h * std::exp(unit(rng) * cfg.max_scale);
        Box b{static_cast<int>(std::lround(cx - nw / 2.0)),
              static_cast<int>(std::lround(cy - nh / 2.0)),
              static_cast<int>(std::lround(cx + nw / 2.0)),
              static_cast<int>(std::lround(cy + nh / 2.0))};
        b.x0 = std::clamp(b.x0, 0, size);
        b.y0 = std::clamp(b.y0, 0, size);
        b.x1 = std::clamp(b.x1, 0, size);
        b.y1 = std::clamp(b.y1, 0, size);
        if (b.empty()) continue;
        const double iou = box_iou(b, gt);
        if (!(iou > cfg.min_iou)) continue;
        dets.push_back({b, iou * score_noise(rng), inst.category, i});
        break;
      }
    }
  }
  return dets;
}

struct PatchSample {
  std::size_t sample_id = 0;
  RgbImage patch;  // P x P
  Mask gt_mask;    // H x H
  std::size_t category = 0;
  double area_weight = 1.0;
  std::size_t scene_id = 0;
  std::size_t instance = 0;
  Box bbox;
};

// Crops `box`, resamples each axis independently to P x P. Values are rounded
// back to 8 bits.
inline RgbImage crop_resize(const RgbImage& img, const Box& box, std::size_t out) {
  if (box.empty()) throw DataError("crop_resize: empty box");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > static_cast<int>(img.width) ||
      box.y1 > static_cast<int>(img.height))
    throw DataError("crop_resize: box outside the image");
  const auto bw = static_cast<std::size_t>(box.width());
  const auto bh = static_cast<std::size_t>(box.height());
  Tensor crop(Dims{1, 3, bh, bw});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < bh; ++y)
      for (std::size_t x = 0; x < bw; ++x)
        crop(0, c, y, x) = img.at(static_cast<std::size_t>(box.x0) + x,
                                  static_cast<std::size_t>(box.y0) + y, c);
  const Tensor r = bilinear_resize(crop, static_cast<long>(out), static_cast<long>(out));
  RgbImage res(out, out);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < out; ++y)
      for (std::size_t x = 0; x < out; ++x)
        res.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp(std::round(r(0, c, y, x)), 0.0, 255.0));
  return res;
}

// Binary mask cropped to `box`, resampled to out x out and kept where the
// interpolated coverage is at least one half.
inline Mask crop_resize_mask(const Mask& mask, const Box& box, std::size_t out) {
  if (box.empty()) throw DataError("crop_resize_mask: empty box");
  const auto bw = static_cast<std::size_t>(box.width());
  const auto bh = static_cast<std::size_t>(box.height());
  Tensor crop(Dims{1, 1, bh, bw});
  for (std::size_t y = 0; y < bh; ++y)
    for (std::size_t x = 0; x < bw; ++x)
      crop(0, 0, y, x) = mask(static_cast<std::size_t>(box.x0) + x,
                              static_cast<std::size_t>(box.y0) + y);
  const Tensor r = bilinear_resize(crop, static_cast<long>(out), static_cast<long>(out));
  Mask res(out, out);
  for (std::size_t i = 0; i < res.size(); ++i) res.values[i] = r.storage()[i] >= 0.5 ? 1 : 0;
  return res;
}

// area_weight is set to the raw box area; dataset construction normalises it.
inline PatchSample extract_patch(const Scene& scene, const Box& box, std::size_t instance,
                                 const ArchDescriptor& arch) {
  if (box.empty()) throw DataError("extract_patch: empty box");
  if (instance >= scene.instances.size())
    throw DataError("extract_patch: instance " + std::to_string(instance) +
                    " not in scene");
  PatchSample s;
  s.patch = crop_resize(scene.image, box, arch.patch_size);
  s.gt_mask = crop_resize_mask(scene.instances[instance].mask, box, arch.heatmap_size);
  s.category = scene.instances[instance].category;
  s.area_weight = static_cast<double>(box.area());
  s.instance = instance;
  s.bbox = box;
  return s;
}

}  // namespace iterseg
