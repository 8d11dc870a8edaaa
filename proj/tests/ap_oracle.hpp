#pragma once

// Reference AP written directly from the definitions with plain containers:
// detections pooled per category, matched greedily in score order, and the
// precision envelope integrated over distinct recall levels.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

namespace oracle {

struct Det {
  int id;
  int scene;
  int category;
  double score;
  std::set<int> pixels;
};

struct Gt {
  int scene;
  int category;
  std::set<int> pixels;
};

inline double iou(const std::set<int>& a, const std::set<int>& b) {
  std::set<int> inter, uni = a;
  for (int p : b) {
    if (a.count(p)) inter.insert(p);
    uni.insert(p);
  }
  return uni.empty() ? 0.0 : double(inter.size()) / double(uni.size());
}

// Returns AP of one category, or -1 when it has neither GT nor detections.
inline double category_ap(std::vector<Det> dets, const std::vector<Gt>& gts, int category,
                          double thr) {
  std::vector<Det> mine;
  for (auto& d : dets)
    if (d.category == category) mine.push_back(d);
  std::vector<int> truth;
  for (int g = 0; g < int(gts.size()); ++g)
    if (gts[g].category == category) truth.push_back(g);
  if (truth.empty()) return mine.empty() ? -1.0 : 0.0;
  std::stable_sort(mine.begin(), mine.end(), [](const Det& a, const Det& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  std::set<int> taken;
  std::vector<double> recall, precision;
  int tp = 0;
  for (int k = 0; k < int(mine.size()); ++k) {
    int best = -1;
    double best_iou = -1.0;
    for (int g : truth) {
      if (taken.count(g) || gts[g].scene != mine[k].scene) continue;
      const double v = iou(mine[k].pixels, gts[g].pixels);
      if (v > best_iou) best_iou = v, best = g;
    }
    if (best >= 0 && best_iou > thr) {
      taken.insert(best);
      ++tp;
    }
    recall.push_back(double(tp) / double(truth.size()));
    precision.push_back(double(tp) / double(k + 1));
  }
  // Interpolated precision p(r) = max precision at recall >= r, integrated as
  // a step function over the distinct recall levels reached.
  std::set<double> levels(recall.begin(), recall.end());
  double ap = 0.0, prev = 0.0;
  for (double r : levels) {
    if (r == 0.0) continue;
    double p = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= r) p = std::max(p, precision[k]);
    ap += (r - prev) * p;
    prev = r;
  }
  return ap;
}

inline double mean_ap(const std::vector<Det>& dets, const std::vector<Gt>& gts, int categories,
                      double thr) {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < categories; ++c) {
    const double ap = category_ap(dets, gts, c, thr);
    if (ap < 0.0) continue;
    sum += ap;
    ++n;
  }
  return n ? sum / n : 0.0;
}

}  // namespace oracle
