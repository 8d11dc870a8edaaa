// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "ap_oracle.hpp"
#include "iterseg/checkpoint.hpp"
#include "iterseg/dataset.hpp"
#include "iterseg/gradcheck.hpp"
#include "iterseg/image_io.hpp"
#include "iterseg/metrics.hpp"
#include "iterseg/pipeline.hpp"

using namespace iterseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string num(double v, int digits = 4) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", digits, v);
  return b;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << "criterion " << criterion << " " << (pass ? "PASS" : "FAIL") << ": " << detail
            << std::endl;
  failures += !pass;
}

// ---- criterion 1 ----

void gradient_fidelity() {
  const auto t0 = Clock::now();
  ArchDescriptor arch;
  arch.patch_size = 16;
  arch.heatmap_size = 8;
  double worst = 0.0;
  bool all = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const GradcheckReport r = gradcheck_segnet(arch, seed);
    worst = std::max(worst, r.max_rel_error);
    all = all && r.passed;
  }
  const double secs = seconds_since(t0);
  report(1, all && worst < 1e-4 && secs < 60.0,
         "gradcheck P=16 H=8 over 10 seeds, max relative error " + num(worst * 1e6, 2) +
             "e-6 (< 1e-4), " + num(secs, 1) + " s (< 60 s)");
}

// ---- criterion 2 ----

Mask rect(int x0, int y0, int x1, int y1) {
  Mask m(8, 8);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = 1;
  return m;
}

std::set<int> pixels(const Mask& m) {
  std::set<int> s;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.values[i]) s.insert(static_cast<int>(i));
  return s;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> ndet(1, 6), ngt(1, 4), pos(0, 5), len(1, 4), score(0, 4);
  double worst = 0.0;
  std::size_t instances = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GroundTruth> gts;
    std::vector<oracle::Gt> ogts;
    for (int k = ngt(rng); k > 0; --k) {
      const int x = pos(rng), y = pos(rng);
      Mask m = rect(x, y, std::min(8, x + len(rng)), std::min(8, y + len(rng)));
      ogts.push_back({0, 0, pixels(m)});
      gts.push_back({0, 0, std::move(m)});
    }
    std::vector<Detection> dets;
    std::vector<oracle::Det> odets;
    for (int k = 0, n = ndet(rng); k < n; ++k) {
      const int x = pos(rng), y = pos(rng);
      Detection d;
      d.id = static_cast<std::size_t>(k);
      d.score = score(rng) / 4.0;
      d.region = rect(x, y, std::min(8, x + len(rng)), std::min(8, y + len(rng)));
      odets.push_back({k, 0, 0, d.score, pixels(d.region)});
      dets.push_back(std::move(d));
    }
    sort_by_score(dets);
    for (double thr : {0.5, 0.7}) {
      const double ap = average_precision(match_detections(dets, gts, thr), gts.size()).ap;
      worst = std::max(worst, std::abs(ap - oracle::category_ap(odets, ogts, 0, thr)));
    }
    ++instances;
  }
  const double secs = seconds_since(t0);
  report(2, worst <= 1e-12 && secs < 10.0,
         std::to_string(instances) + " random instances (<= 6 dets, <= 4 GTs) at IoU 0.5 and 0.7, max |AP - oracle| = " +
             num(worst, 15) + ", " + num(secs, 2) + " s");
}

// ---- criteria 3 to 6 ----

struct SeedOutcome {
  RefinementStats stats;
  double improved = 0.0;
  double degraded = 0.0;
  double probe = 0.0;
  double train_seconds = 0.0;
};

std::vector<Detection> as_detections(const std::vector<SegmentedDetection>& segs) {
  std::vector<Detection> out;
  for (const auto& s : segs) {
    Detection d;
    d.id = s.det.id;
    d.scene = s.scene;
    d.category = s.det.category;
    d.score = s.det.score;
    d.bbox = s.det.bbox;
    d.region = s.region;
    out.push_back(std::move(d));
  }
  return out;
}

SeedOutcome run_seed(const fs::path& data_dir, const DatasetIndex& idx,
                     const std::vector<PatchSample>& train, std::uint64_t seed) {
  SeedOutcome o;
  const ArchDescriptor arch;
  const StageSchedule schedule;
  std::vector<SegNet> stage_nets;
  TrainCallbacks cb;
  cb.on_stage_end = [&](std::size_t t, const SegNet& net, const PredictionStore&) {
    stage_nets.push_back(net);
    std::cerr << "  seed " << seed << " stage " << t << " done" << std::endl;
  };
  const auto t0 = Clock::now();
  const TrainResult res = train_stages(train, init_params(arch, seed), schedule, seed, cb);
  o.train_seconds = seconds_since(t0);

  const auto val = scenes_in_split(idx, "val");
  o.stats = refinement_analysis(res.net, data_dir, val, 3);

  EvalConfig one, three;
  one.iterations = 1;
  three.iterations = 3;
  std::vector<Detection> base, prop;
  std::vector<GroundTruth> gts;
  for (const SceneRecord* rec : val) {
    const Scene scene = load_scene(data_dir, *rec);
    for (auto& d : as_detections(segment_scene(stage_nets.front(), scene, *rec, one))) base.push_back(std::move(d));
    for (auto& d : as_detections(segment_scene(res.net, scene, *rec, three))) prop.push_back(std::move(d));
    for (const auto& inst : scene.instances) gts.push_back({rec->id, inst.category, inst.mask});
  }
  const ScatterSummary s = scatter_by_id(base, prop, gts);
  o.improved = s.improved;
  o.degraded = s.degraded;

  std::size_t used = 0;
  for (const auto& r : idx.samples) {
    if (r.split != Split::val || used == 20) continue;
    const RgbImage patch = read_ppm(data_dir / paths::patch_image(r.id));
    o.probe += category_swap_probe(res.net, patch, 3).mean_off_diagonal;
    ++used;
  }
  o.probe /= static_cast<double>(used);
  return o;
}

void trained_model_criteria() {
  const fs::path data_dir = fs::temp_directory_path() / "iterseg_acceptance_data";
  fs::remove_all(data_dir);
  const DatasetConfig dcfg;
  const auto summary = build_dataset(dcfg, 1, data_dir);
  const DatasetIndex& idx = summary.index;
  const auto train = load_samples(data_dir, idx, Split::train);
  std::cerr << "acceptance dataset: " << idx.samples.size() << " patches, " << train.size()
            << " for training" << std::endl;

  std::vector<SeedOutcome> outcomes;
  for (std::uint64_t seed : {1u, 2u, 3u}) outcomes.push_back(run_seed(data_dir, idx, train, seed));
  fs::remove_all(data_dir);

  auto med = [&](auto get) {
    std::vector<double> v;
    for (const auto& o : outcomes) v.push_back(get(o));
    return std::make_pair(median(v), v);
  };
  double slowest = 0.0;
  for (const auto& o : outcomes) slowest = std::max(slowest, o.train_seconds);
  const std::string budget = "slowest seed trained in " + num(slowest / 60.0, 1) + " min";

  const auto iou1 = med([](const SeedOutcome& o) { return o.stats.mean_iou[1]; });
  const auto iou3 = med([](const SeedOutcome& o) { return o.stats.mean_iou[3]; });
  const auto ab1 = med([](const SeedOutcome& o) { return o.stats.abutting_iou[1]; });
  const auto ab3 = med([](const SeedOutcome& o) { return o.stats.abutting_iou[3]; });
  report(3, iou3.first > iou1.first && ab3.first - ab1.first >= 0.02 && slowest <= 1800.0,
         "median val IoU it1 " + num(iou1.first) + " -> it3 " + num(iou3.first) +
             "; abutting subset it1 " + num(ab1.first) + " -> it3 " + num(ab3.first) + " (gain " +
             num(ab3.first - ab1.first) + ", need >= 0.02); per seed it3 " + list(iou3.second) +
             ", abutting it3 " + list(ab3.second) + "; " + budget + " (<= 30)");

  std::vector<double> intr;
  for (std::size_t t = 1; t <= 3; ++t)
    intr.push_back(med([t](const SeedOutcome& o) { return o.stats.abutting_intrusion[t]; }).first);
  report(4, intr[0] > intr[1] && intr[1] > intr[2],
         "median intrusion fraction on abutting subset over iterations 1..3 " + list(intr) + " (" +
             std::to_string(outcomes.front().stats.abutting_detections) + " abutting detections)");

  const auto up = med([](const SeedOutcome& o) { return o.improved; });
  const auto down = med([](const SeedOutcome& o) { return o.degraded; });
  report(5, up.first > down.first,
         "final model M=3 vs stage-1 model M=1: median improved " + num(100 * up.first, 1) +
             "% vs degraded " + num(100 * down.first, 1) + "%; per seed improved " +
             list(up.second) + ", degraded " + list(down.second));

  const auto probe = med([](const SeedOutcome& o) { return o.probe; });
  report(6, probe.first > 0.05,
         "median mean off-diagonal L1 distance on 20 val patches " + num(probe.first) +
             " (> 0.05); per seed " + list(probe.second));
}

// ---- criterion 7 ----

bool nms_bound() {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> c(0, 60), s(5, 30);
  std::uniform_real_distribution<double> sc(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Box> boxes;
    std::vector<ScoredItem> items;
    for (std::size_t i = 0; i < 15; ++i) {
      const int x = c(rng), y = c(rng);
      boxes.push_back({x, y, x + s(rng), y + s(rng)});
      items.push_back({i, sc(rng)});
    }
    for (double thr : {0.3, 0.5, 0.7}) {
      const auto kept =
          nms(items, [&](std::size_t a, std::size_t b) { return box_iou(boxes[a], boxes[b]); }, thr);
      for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t j = i + 1; j < kept.size(); ++j)
          if (box_iou(boxes[kept[i]], boxes[kept[j]]) > thr) return false;
    }
  }
  return true;
}

bool projection_properties() {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene scene = generate_scene(SceneConfig{}, seed);
    const SuperpixelMap sp = compute_superpixels(scene.image);
    Heatmap h(scene.image.width, scene.image.height);
    for (double& v : h.values) v = u(rng);
    const Heatmap a = project_to_superpixels(h, sp), b = project_to_superpixels(a, sp);
    double sa = 0, sh = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (std::abs(a.values[i] - b.values[i]) > 1e-12) return false;
      sa += a.values[i];
      sh += h.values[i];
    }
    if (std::abs(sa - sh) > 1e-12 * sh) return false;
  }
  return true;
}

bool binarization_strict() {
  Heatmap h(4, 1);
  h.values = {0.4, std::nextafter(0.4, 1.0), 0.41, 0.39};
  return binarize(h).values == std::vector<std::uint8_t>{0, 1, 1, 0};
}

bool heatmap_range() {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ArchDescriptor a;
    a.patch_size = 16;
    a.heatmap_size = 8;
    const SegNet net = init_params(a, seed, 4.0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> px(0, 255);
    RgbImage img(16, 16);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
    for (std::size_t c = 0; c < a.num_categories; ++c)
      for (const auto& h : infer(net, img, c, 3).trajectory)
        for (double v : h.values)
          if (!(v > 0.0 && v < 1.0)) return false;
  }
  return true;
}

bool checkpoint_round_trip() {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto bytes = serialize_checkpoint(init_params(ArchDescriptor{}, seed));
    if (serialize_checkpoint(deserialize_checkpoint(bytes)) != bytes) return false;
  }
  return true;
}

bool dataset_determinism() {
  DatasetConfig cfg;
  cfg.num_scenes = 15;
  const fs::path a = fs::temp_directory_path() / "iterseg_acceptance_det_a";
  const fs::path b = fs::temp_directory_path() / "iterseg_acceptance_det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  build_dataset(cfg, 5, a);
  build_dataset(cfg, 5, b);
  bool same = true;
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) {
      ++files;
      same = same && detail::read_file(e.path()) == detail::read_file(b / fs::relative(e.path(), a));
    }
  for (const auto& e : fs::recursive_directory_iterator(b)) files -= e.is_regular_file();
  fs::remove_all(a);
  fs::remove_all(b);
  return same && files == 0;
}

void invariant_suite() {
  const std::vector<std::pair<std::string, bool>> checks{
      {"nms-bound", nms_bound()},
      {"projection-idempotent-mean", projection_properties()},
      {"binarize-strict-0.4", binarization_strict()},
      {"heatmap-range", heatmap_range()},
      {"checkpoint-round-trip", checkpoint_round_trip()},
      {"dataset-determinism", dataset_determinism()}};
  bool all = true;
  std::string detail;
  for (const auto& [name, ok] : checks) {
    all = all && ok;
    detail += (detail.empty() ? "" : ", ") + name + (ok ? " ok" : " FAILED");
  }
  report(7, all, detail);
}

// ---- criterion 8 ----

void stage_bookkeeping() {
  ArchDescriptor a;
  a.patch_size = 16;
  a.heatmap_size = 8;
  std::vector<PatchSample> samples;
  for (std::size_t i = 0; i < 10; ++i) {
    PatchSample s;
    s.sample_id = i;
    s.category = i % 4;
    s.patch = RgbImage(16, 16);
    for (std::size_t k = 0; k < s.patch.pixels.size(); ++k) s.patch.pixels[k] = static_cast<std::uint8_t>((k * 7 + i * 31) % 256);
    s.gt_mask = Mask(8, 8);
    for (std::size_t k = 0; k < 64; ++k) s.gt_mask.values[k] = (k + i) % 3 == 0;
    samples.push_back(std::move(s));
  }
  StageSchedule sched;
  sched.iterations_per_stage = {3, 3, 3, 3};
  sched.batch_size = 4;
  std::vector<std::size_t> sizes;
  TrainCallbacks cb;
  cb.on_stage_end = [&](std::size_t t, const SegNet&, const PredictionStore& store) {
    sizes.push_back(build_stage_training_set(store, samples.size(), t).size());
  };
  train_stages(samples, init_params(a, 1), sched, 1, cb);
  bool ok = sizes.size() == 4;
  std::string detail = "pool sizes per stage";
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    ok = ok && sizes[t] == 10 * (t + 1);
    detail += " t=" + std::to_string(t + 1) + ":" + std::to_string(sizes[t]);
  }
  report(8, ok, detail + " (expected n*t with n = 10)");
}

}  // namespace

int main() {
  try {
    gradient_fidelity();
    oracle_equivalence();
    trained_model_criteria();
    invariant_suite();
    stage_bookkeeping();
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed"
                         : std::string("acceptance: all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
