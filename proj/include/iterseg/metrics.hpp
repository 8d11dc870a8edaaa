#pragma once

// Region average precision: mask IoU, greedy score-ordered matching and
// all-points interpolated AP; plus the per-detection overlap scatter and the
// category-swap probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "iterseg/engine.hpp"
#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"

namespace iterseg {

struct Detection {
  std::size_t id = 0;
  std::size_t scene = 0;
  std::size_t category = 0;
  double score = 0.0;
  Mask region;
  Box bbox;
};

struct GroundTruth {
  std::size_t scene = 0;
  std::size_t category = 0;
  Mask mask;
};

// |a & b| / |a | b|; 0 when both are empty.
inline double mask_iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height)
    throw DataError("mask_iou: masks are " + std::to_string(a.width) + "x" +
                    std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                    std::to_string(b.height));
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.values[i] != 0, y = b.values[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Detections in the order given (score descending). Each takes the unmatched
// GT of the same scene and category with highest IoU (ties: lowest index) if
// that IoU exceeds the threshold; otherwise it is a false positive.
inline std::vector<bool> match_detections(std::span<const Detection> dets,
                                          std::span<const GroundTruth> gts,
                                          double iou_threshold) {
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].scene != dets[d].scene || gts[g].category != dets[d].category)
        continue;
      const double iou = mask_iou(dets[d].region, gts[g].mask);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g < gts.size() && best > iou_threshold) {
      used[best_g] = true;
      tp[d] = true;
    }
  }
  return tp;
}

struct PRCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision)
  double ap = 0.0;
  bool undefined = false;  // no GT and no detections
};

// All-points interpolated AP: sum over recall steps of the precision
// envelope (max precision at any later rank).
inline PRCurve average_precision(const std::vector<bool>& tp, std::size_t num_gt) {
  PRCurve c;
  if (num_gt == 0) {
    c.undefined = tp.empty();
    return c;
  }
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k];
    c.points.emplace_back(static_cast<double>(hits) / static_cast<double>(num_gt),
                          static_cast<double>(hits) / static_cast<double>(k + 1));
  }
  std::vector<double> envelope(c.points.size());
  double run = 0.0;
  for (std::size_t k = c.points.size(); k-- > 0;) {
    run = std::max(run, c.points[k].second);
    envelope[k] = run;
  }
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    if (!tp[k]) continue;
    c.ap += (c.points[k].first - prev_recall) * envelope[k];
    prev_recall = c.points[k].first;
  }
  return c;
}

struct CategoryAp {
  std::size_t category = 0;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
  PRCurve curve;
};

struct ThresholdTable {
  double threshold = 0.0;
  std::vector<CategoryAp> categories;
  double mean_ap = 0.0;  // over categories with a defined AP
};

// Score descending, id ascending.
inline void sort_by_score(std::vector<Detection>& dets) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

inline std::vector<ThresholdTable> mean_apr(std::span<const Detection> dets,
                                            std::span<const GroundTruth> gts,
                                            std::span<const double> thresholds,
                                            std::size_t num_categories) {
  std::vector<ThresholdTable> tables;
  for (double thr : thresholds) {
    ThresholdTable table;
    table.threshold = thr;
    std::size_t defined = 0;
    double sum = 0.0;
    for (std::size_t c = 0; c < num_categories; ++c) {
      std::vector<Detection> mine;
      std::vector<GroundTruth> truth;
      for (const auto& d : dets)
        if (d.category == c) mine.push_back(d);
      for (const auto& g : gts)
        if (g.category == c) truth.push_back(g);
      sort_by_score(mine);
      const auto tp = match_detections(mine, truth, thr);
      CategoryAp cap{c, truth.size(), mine.size(), average_precision(tp, truth.size())};
      if (!cap.curve.undefined) {
        ++defined;
        sum += cap.curve.ap;
      }
      table.categories.push_back(std::move(cap));
    }
    table.mean_ap = defined ? sum / static_cast<double>(defined) : 0.0;
    tables.push_back(std::move(table));
  }
  return tables;
}

// Highest IoU of `region` with any GT of the same scene and category.
inline double best_overlap(const Mask& region, std::size_t scene, std::size_t category,
                           std::span<const GroundTruth> gts) {
  double best = 0.0;
  for (const auto& g : gts)
    if (g.scene == scene && g.category == category)
      best = std::max(best, mask_iou(region, g.mask));
  return best;
}

struct ScatterPoint {
  std::size_t id = 0;
  std::size_t category = 0;
  double baseline_iou = 0.0;
  double proposed_iou = 0.0;
};

struct ScatterSummary {
  std::vector<ScatterPoint> points;
  double improved = 0.0;  // fractions of points
  double degraded = 0.0;
  double equal = 0.0;
};

// Pairs detections by position: baseline[k] and proposed[k] are the same box.
inline ScatterSummary overlap_scatter(std::span<const Detection> baseline,
                                      std::span<const Detection> proposed,
                                      std::span<const GroundTruth> gts) {
  if (baseline.size() != proposed.size())
    throw MismatchError("overlap_scatter: detection lists differ in length");
  ScatterSummary s;
  std::size_t up = 0, down = 0, same = 0;
  for (std::size_t k = 0; k < baseline.size(); ++k) {
    const Detection& b = baseline[k];
    const Detection& p = proposed[k];
    if (b.id != p.id) throw MismatchError("overlap_scatter: detection ids differ");
    ScatterPoint pt{p.id, p.category, best_overlap(b.region, b.scene, b.category, gts),
                    best_overlap(p.region, p.scene, p.category, gts)};
    if (pt.proposed_iou > pt.baseline_iou)
      ++up;
    else if (pt.proposed_iou < pt.baseline_iou)
      ++down;
    else
      ++same;
    s.points.push_back(pt);
  }
  if (!s.points.empty()) {
    const double n = static_cast<double>(s.points.size());
    s.improved = static_cast<double>(up) / n;
    s.degraded = static_cast<double>(down) / n;
    s.equal = static_cast<double>(same) / n;
  }
  return s;
}

struct ProbeResult {
  std::vector<Heatmap> heatmaps;              // one per forced category
  std::vector<std::vector<double>> distance;  // mean |h_i - h_j| per pixel
  double mean_off_diagonal = 0.0;
};

// Runs refinement once per category label on the same patch.
inline ProbeResult category_swap_probe(const SegNet& net, const RgbImage& patch,
                                       std::size_t iterations = kDefaultTestIterations) {
  const std::size_t c = net.arch().num_categories;
  ProbeResult r;
  for (std::size_t k = 0; k < c; ++k)
    r.heatmaps.push_back(infer(net, patch, k, iterations).final_heatmap);
  r.distance.assign(c, std::vector<double>(c, 0.0));
  double off = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i + 1; j < c; ++j) {
      const auto& a = r.heatmaps[i].values;
      const auto& b = r.heatmaps[j].values;
      double sum = 0.0;
      for (std::size_t p = 0; p < a.size(); ++p) sum += std::abs(a[p] - b[p]);
      const double d = sum / static_cast<double>(a.size());
      r.distance[i][j] = r.distance[j][i] = d;
      off += 2.0 * d;
    }
  if (c > 1) r.mean_off_diagonal = off / static_cast<double>(c * (c - 1));
  return r;
}

}  // namespace iterseg
