#pragma once

// Heatmap -> region conversion: paste into scene coordinates, optional
// superpixel projection, binarisation, and greedy NMS.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"
#include "iterseg/nn.hpp"

namespace iterseg {

inline constexpr double kBinarizeThreshold = 0.4;
inline constexpr double kRegionNmsThreshold = 0.3;
inline constexpr double kBoxNmsThreshold = 0.7;

// Heatmap resampled to the box and written into a zero grid of scene size.
inline Heatmap paste_heatmap(const Heatmap& heat, const Box& box, std::size_t scene_w,
                             std::size_t scene_h) {
  if (box.empty() || box.x0 < 0 || box.y0 < 0 || box.x1 > static_cast<int>(scene_w) ||
      box.y1 > static_cast<int>(scene_h))
    throw DataError("paste_heatmap: box outside the scene");
  Tensor src(Dims{1, 1, heat.height, heat.width}, heat.values);
  const Tensor r = bilinear_resize(src, box.height(), box.width());
  Heatmap out(scene_w, scene_h, 0.0);
  const auto bw = static_cast<std::size_t>(box.width());
  for (std::size_t y = 0; y < static_cast<std::size_t>(box.height()); ++y)
    for (std::size_t x = 0; x < bw; ++x)
      out(static_cast<std::size_t>(box.x0) + x, static_cast<std::size_t>(box.y0) + y) =
          r.storage()[y * bw + x];
  return out;
}

// Foreground iff value > threshold (strict).
inline Mask binarize(const Heatmap& heat, double threshold = kBinarizeThreshold) {
  Mask m(heat.width, heat.height);
  for (std::size_t i = 0; i < heat.size(); ++i) m.values[i] = heat.values[i] > threshold;
  return m;
}

struct SuperpixelMap {
  LabelMap labels;
  std::size_t count = 0;
};

struct SuperpixelOptions {
  std::size_t count = 200;
  double compactness = 10.0;
  std::size_t iterations = 10;
};

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  std::vector<std::size_t> size;
  explicit UnionFind(std::size_t n) : parent(n), size(n, 1) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size[a] < size[b] || (size[a] == size[b] && b < a)) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
  }
};

// 4-connected components of a label grid; returns component id per pixel.
inline std::vector<std::size_t> components(const LabelMap& labels, std::size_t& count) {
  const std::size_t w = labels.width, h = labels.height;
  UnionFind uf(w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      if (x + 1 < w && labels.values[p] == labels.values[p + 1]) uf.unite(p, p + 1);
      if (y + 1 < h && labels.values[p] == labels.values[p + w]) uf.unite(p, p + w);
    }
  std::vector<std::size_t> comp(w * h);
  std::vector<std::size_t> id(w * h, std::numeric_limits<std::size_t>::max());
  count = 0;
  for (std::size_t p = 0; p < w * h; ++p) {
    const std::size_t r = uf.find(p);
    if (id[r] == std::numeric_limits<std::size_t>::max()) id[r] = count++;
    comp[p] = id[r];
  }
  return comp;
}

}  // namespace detail

// SLIC-style clustering in (x, y, r, g, b) seeded on a regular grid, then
// connectivity enforcement: every 4-connected piece other than the largest of
// its cluster is merged into the largest adjacent segment. Labels are
// renumbered 0..K-1 in raster order of first appearance.
inline SuperpixelMap compute_superpixels(const RgbImage& img,
                                         const SuperpixelOptions& opt = {}) {
  const std::size_t w = img.width, h = img.height, n = w * h;
  if (opt.count < 1) throw ConfigError("superpixel count must be >= 1");
  if (opt.count > n)
    throw ConfigError("superpixel count " + std::to_string(opt.count) +
                      " exceeds pixel count " + std::to_string(n));

  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  auto ny = static_cast<std::size_t>(
      std::max(1.0, std::round(std::sqrt(static_cast<double>(opt.count) * fh / fw))));
  ny = std::min(ny, h);
  auto nx = static_cast<std::size_t>(
      std::max(1.0, std::round(static_cast<double>(opt.count) / static_cast<double>(ny))));
  nx = std::min(nx, w);
  const double step = std::sqrt(fw * fh / static_cast<double>(nx * ny));

  struct Center {
    double x, y, r, g, b;
  };
  std::vector<Center> centers;
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const double cx = (static_cast<double>(i) + 0.5) * fw / static_cast<double>(nx);
      const double cy = (static_cast<double>(j) + 0.5) * fh / static_cast<double>(ny);
      const auto px = std::min(static_cast<std::size_t>(cx), w - 1);
      const auto py = std::min(static_cast<std::size_t>(cy), h - 1);
      centers.push_back({cx, cy, double(img.at(px, py, 0)), double(img.at(px, py, 1)),
                         double(img.at(px, py, 2))});
    }

  LabelMap labels(w, h, 0);
  std::vector<double> dist(n);
  const double spatial = (opt.compactness / step) * (opt.compactness / step);
  const double window = 2.0 * step;
  for (std::size_t iter = 0; iter < std::max<std::size_t>(opt.iterations, 1); ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.x - window)));
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(c.y - window)));
      const auto x1 = static_cast<std::size_t>(std::min(fw, std::ceil(c.x + window)));
      const auto y1 = static_cast<std::size_t>(std::min(fh, std::ceil(c.y + window)));
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          const double dr = img.at(x, y, 0) - c.r, dg = img.at(x, y, 1) - c.g,
                       db = img.at(x, y, 2) - c.b;
          const double dx = static_cast<double>(x) + 0.5 - c.x;
          const double dy = static_cast<double>(y) + 0.5 - c.y;
          const double d = dr * dr + dg * dg + db * db + spatial * (dx * dx + dy * dy);
          const std::size_t p = y * w + x;
          if (d < dist[p]) {
            dist[p] = d;
            labels.values[p] = static_cast<int>(k);
          }
        }
    }
    // Pixels outside every window keep their previous label.
    std::vector<Center> sums(centers.size(), Center{0, 0, 0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto k = static_cast<std::size_t>(labels(x, y));
        Center& s = sums[k];
        s.x += static_cast<double>(x) + 0.5;
        s.y += static_cast<double>(y) + 0.5;
        s.r += img.at(x, y, 0);
        s.g += img.at(x, y, 1);
        s.b += img.at(x, y, 2);
        ++counts[k];
      }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      centers[k] = {sums[k].x * inv, sums[k].y * inv, sums[k].r * inv, sums[k].g * inv,
                    sums[k].b * inv};
    }
  }

  // Connectivity: keep the largest piece of each cluster, merge the rest.
  std::size_t ncomp = 0;
  const auto comp = detail::components(labels, ncomp);
  std::vector<std::size_t> comp_size(ncomp, 0);
  std::vector<int> comp_label(ncomp, 0);
  for (std::size_t p = 0; p < n; ++p) {
    ++comp_size[comp[p]];
    comp_label[comp[p]] = labels.values[p];
  }
  std::vector<std::size_t> largest(centers.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t c = 0; c < ncomp; ++c) {
    auto& best = largest[static_cast<std::size_t>(comp_label[c])];
    if (best == std::numeric_limits<std::size_t>::max() || comp_size[c] > comp_size[best])
      best = c;
  }
  std::vector<std::vector<std::size_t>> adjacent(ncomp);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      if (x + 1 < w && comp[p] != comp[p + 1]) {
        adjacent[comp[p]].push_back(comp[p + 1]);
        adjacent[comp[p + 1]].push_back(comp[p]);
      }
      if (y + 1 < h && comp[p] != comp[p + w]) {
        adjacent[comp[p]].push_back(comp[p + w]);
        adjacent[comp[p + w]].push_back(comp[p]);
      }
    }
  detail::UnionFind merged(ncomp);
  for (std::size_t c = 0; c < ncomp; ++c) merged.size[c] = comp_size[c];
  // Orphans in order of increasing size, ties by component id.
  std::vector<std::size_t> orphans;
  for (std::size_t c = 0; c < ncomp; ++c)
    if (largest[static_cast<std::size_t>(comp_label[c])] != c) orphans.push_back(c);
  std::stable_sort(orphans.begin(), orphans.end(), [&](std::size_t a, std::size_t b) {
    return comp_size[a] < comp_size[b];
  });
  for (std::size_t c : orphans) {
    std::size_t best = c, best_size = 0;
    for (std::size_t a : adjacent[c]) {
      const std::size_t ra = merged.find(a);
      if (ra == merged.find(c)) continue;
      if (merged.size[ra] > best_size || (merged.size[ra] == best_size && ra < best)) {
        best = ra;
        best_size = merged.size[ra];
      }
    }
    if (best != c) merged.unite(best, c);
  }

  SuperpixelMap out;
  out.labels = LabelMap(w, h, 0);
  std::vector<int> renumber(ncomp, -1);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t root = merged.find(comp[p]);
    if (renumber[root] < 0) renumber[root] = static_cast<int>(out.count++);
    out.labels.values[p] = renumber[root];
  }
  return out;
}

// Every pixel replaced by the mean heat of its superpixel.
inline Heatmap project_to_superpixels(const Heatmap& heat, const SuperpixelMap& sp) {
  if (heat.width != sp.labels.width || heat.height != sp.labels.height)
    throw ConfigError("project_to_superpixels: heat grid and superpixel map differ in size");
  std::vector<double> sum(sp.count, 0.0);
  std::vector<std::size_t> count(sp.count, 0);
  for (std::size_t p = 0; p < heat.size(); ++p) {
    const auto k = static_cast<std::size_t>(sp.labels.values[p]);
    sum[k] += heat.values[p];
    ++count[k];
  }
  std::vector<double> mean(sp.count, 0.0);
  for (std::size_t k = 0; k < sp.count; ++k)
    if (count[k]) mean[k] = sum[k] / static_cast<double>(count[k]);
  Heatmap out(heat.width, heat.height);
  for (std::size_t p = 0; p < heat.size(); ++p)
    out.values[p] = mean[static_cast<std::size_t>(sp.labels.values[p])];
  return out;
}

struct ScoredItem {
  std::size_t id = 0;
  double score = 0.0;
};

// Greedy NMS. Items are visited by score descending, ties by id ascending;
// an item is dropped when overlap with any kept item exceeds the threshold.
// `overlap(i, j)` takes positions in `items`. Returns kept positions in visit
// order.
inline std::vector<std::size_t> nms(std::span<const ScoredItem> items,
                                    const std::function<double(std::size_t, std::size_t)>& overlap,
                                    double threshold) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].score != items[b].score) return items[a].score > items[b].score;
    return items[a].id < items[b].id;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : kept)
      if (overlap(k, i) > threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace iterseg
