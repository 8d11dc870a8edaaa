#include <gtest/gtest.h>

#include <queue>
#include <random>
#include <cmath>

#include "iterseg/image_io.hpp"
#include "iterseg/postprocess.hpp"
#include "iterseg/synth.hpp"
#include "support.hpp"

using namespace iterseg;
using namespace testing_support;

namespace {

Heatmap random_heat(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap m(w, h);
  for (double& v : m.values) v = u(rng);
  return m;
}

// Every label present, and each label's pixels form one 4-connected component.
void expect_partition(const SuperpixelMap& sp) {
  const auto& l = sp.labels;
  std::vector<std::size_t> sizes(sp.count, 0);
  for (int v : l.values) {
    ASSERT_GE(v, 0);
    ASSERT_LT(static_cast<std::size_t>(v), sp.count);
    ++sizes[static_cast<std::size_t>(v)];
  }
  for (std::size_t s : sizes) EXPECT_GT(s, 0u);
  std::vector<bool> seen_label(sp.count, false);
  std::vector<bool> visited(l.size(), false);
  for (std::size_t start = 0; start < l.size(); ++start) {
    if (visited[start]) continue;
    const int lab = l.values[start];
    EXPECT_FALSE(seen_label[static_cast<std::size_t>(lab)]) << "label " << lab << " is split";
    seen_label[static_cast<std::size_t>(lab)] = true;
    std::queue<std::size_t> q;
    q.push(start);
    visited[start] = true;
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop();
      const std::size_t x = p % l.width, y = p / l.width;
      auto visit = [&](std::size_t nx, std::size_t ny) {
        const std::size_t np = ny * l.width + nx;
        if (!visited[np] && l.values[np] == lab) {
          visited[np] = true;
          q.push(np);
        }
      };
      if (x > 0) visit(x - 1, y);
      if (x + 1 < l.width) visit(x + 1, y);
      if (y > 0) visit(x, y - 1);
      if (y + 1 < l.height) visit(x, y + 1);
    }
  }
}

}  // namespace

TEST(PasteHeatmap, ConstantOneFillsBoxOnly) {
  const Box b{3, 5, 11, 9};
  const Heatmap g = paste_heatmap(constant_heatmap(8, 1.0), b, 16, 12);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const bool inside = static_cast<int>(x) >= b.x0 && static_cast<int>(x) < b.x1 &&
                          static_cast<int>(y) >= b.y0 && static_cast<int>(y) < b.y1;
      EXPECT_NEAR(g(x, y), inside ? 1.0 : 0.0, 1e-15);
    }
}

TEST(PasteHeatmap, WholeSceneSameSizeIsIdentity) {
  const Heatmap h = random_heat(16, 16, 3);
  const Heatmap g = paste_heatmap(h, Box{0, 0, 16, 16}, 16, 16);
  EXPECT_EQ(g.values, h.values);
}

TEST(PasteHeatmap, ConstantSurvivesRoundTrip) {
  const Heatmap g = paste_heatmap(constant_heatmap(32, 0.63), Box{10, 20, 57, 41}, 128, 128);
  for (int y = 20; y < 41; ++y)
    for (int x = 10; x < 57; ++x) EXPECT_NEAR(g(static_cast<std::size_t>(x), static_cast<std::size_t>(y)), 0.63, 1e-15);
}

TEST(Binarize, StrictAtFortyPercent) {
  Heatmap h(3, 1);
  h.values = {0.41, 0.40, 0.39};
  const Mask m = binarize(h);
  EXPECT_EQ(m.values, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(kBinarizeThreshold, 0.4);
  EXPECT_EQ(count_foreground(binarize(Heatmap(5, 5, 0.0))), 0u);
  Heatmap z(2, 1);
  z.values = {0.0, 1e-12};
  EXPECT_EQ(binarize(z, 0.0).values, (std::vector<std::uint8_t>{0, 1}));
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Heatmap r = random_heat(9, 9, s);
    const Mask b = binarize(r);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(b.values[i] != 0, r.values[i] > 0.4);
  }
}

TEST(Superpixels, SingleSegment) {
  const Scene s = generate_scene(SceneConfig{}, 2);
  const SuperpixelMap sp = compute_superpixels(s.image, {1, 10.0, 10});
  EXPECT_EQ(sp.count, 1u);
  for (int v : sp.labels.values) EXPECT_EQ(v, 0);
}

TEST(Superpixels, UniformImageGivesGoldenTiles) {
  RgbImage flat(16, 16);
  for (auto& p : flat.pixels) p = 120;
  const SuperpixelMap sp = compute_superpixels(flat, {4, 10.0, 10});
  EXPECT_EQ(sp.count, 4u);
  const auto golden = read_pgm(golden_dir() / "superpixel_tiles.pgm");
  ASSERT_EQ(golden.size(), sp.labels.size());
  for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_EQ(golden.values[i], sp.labels.values[i]);
  std::vector<std::size_t> sizes(4, 0);
  for (int v : sp.labels.values) ++sizes[static_cast<std::size_t>(v)];
  for (std::size_t s : sizes) EXPECT_EQ(s, 64u);
  expect_partition(sp);
}

TEST(Superpixels, PartitionOnScenes) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Scene s = generate_scene(SceneConfig{}, seed);
    const SuperpixelMap sp = compute_superpixels(s.image, SuperpixelOptions{});
    EXPECT_GT(sp.count, 100u);
    expect_partition(sp);
    EXPECT_EQ(compute_superpixels(s.image, SuperpixelOptions{}).labels, sp.labels);
  }
}

TEST(Superpixels, TooManySegmentsIsConfigError) {
  RgbImage img(4, 4);
  EXPECT_THROW(compute_superpixels(img, {17, 10.0, 10}), ConfigError);
  EXPECT_THROW(compute_superpixels(img, {0, 10.0, 10}), ConfigError);
}

TEST(ProjectToSuperpixels, Examples) {
  SuperpixelMap sp;
  sp.count = 2;
  sp.labels = LabelMap(2, 2);
  sp.labels.values = {0, 0, 1, 1};
  Heatmap h(2, 2);
  h.values = {0.2, 0.8, 0.1, 0.1};
  const Heatmap p = project_to_superpixels(h, sp);
  EXPECT_NEAR(p.values[0], 0.5, 1e-15);
  EXPECT_NEAR(p.values[1], 0.5, 1e-15);
  EXPECT_NEAR(p.values[2], 0.1, 1e-15);
  const Heatmap c = project_to_superpixels(Heatmap(2, 2, 0.7), sp);
  for (double v : c.values) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(ProjectToSuperpixels, IdempotentMeanPreservingAndConstantWithinSegments) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Scene s = generate_scene(SceneConfig{}, seed + 10);
    const SuperpixelMap sp = compute_superpixels(s.image, SuperpixelOptions{});
    const Heatmap h = random_heat(128, 128, seed);
    const Heatmap once = project_to_superpixels(h, sp);
    const Heatmap twice = project_to_superpixels(once, sp);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      EXPECT_NEAR(once.values[i], twice.values[i], 1e-12);
      a += h.values[i];
      b += once.values[i];
    }
    EXPECT_LE(std::abs(a - b), 1e-12 * a);
    const Mask m = binarize(once);
    std::vector<int> region_value(sp.count, -1);
    for (std::size_t i = 0; i < m.size(); ++i) {
      int& r = region_value[static_cast<std::size_t>(sp.labels.values[i])];
      if (r < 0) r = m.values[i];
      EXPECT_EQ(r, m.values[i]);
    }
  }
}

TEST(ProjectToSuperpixels, DimsMismatchIsConfigError) {
  SuperpixelMap sp;
  sp.count = 1;
  sp.labels = LabelMap(3, 3);
  EXPECT_THROW(project_to_superpixels(Heatmap(2, 2), sp), ConfigError);
}

namespace {

std::vector<std::size_t> kept_ids(const std::vector<ScoredItem>& items,
                                  const std::vector<std::vector<double>>& ov, double thr) {
  const auto kept = nms(items, [&](std::size_t a, std::size_t b) { return ov[a][b]; }, thr);
  std::vector<std::size_t> ids;
  for (std::size_t k : kept) ids.push_back(items[k].id);
  return ids;
}

}  // namespace

TEST(Nms, DisjointAllKept) {
  const std::vector<ScoredItem> items{{0, 0.3}, {1, 0.9}, {2, 0.5}};
  const std::vector<std::vector<double>> ov(3, std::vector<double>(3, 0.0));
  EXPECT_EQ(kept_ids(items, ov, 0.3), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Nms, IdenticalKeepsHigher) {
  const std::vector<ScoredItem> items{{0, 0.8}, {1, 0.9}};
  const std::vector<std::vector<double>> ov{{1, 1}, {1, 1}};
  EXPECT_EQ(kept_ids(items, ov, 0.3), (std::vector<std::size_t>{1}));
}

TEST(Nms, ChainKeepsAAndC) {
  const std::vector<ScoredItem> items{{0, 0.9}, {1, 0.8}, {2, 0.7}};
  const std::vector<std::vector<double>> ov{{1, 0.5, 0}, {0.5, 1, 0.5}, {0, 0.5, 1}};
  EXPECT_EQ(kept_ids(items, ov, 0.3), (std::vector<std::size_t>{0, 2}));
}

TEST(Nms, TiesBrokenByIdAscending) {
  const std::vector<ScoredItem> items{{5, 0.5}, {2, 0.5}};
  const std::vector<std::vector<double>> ov{{1, 1}, {1, 1}};
  EXPECT_EQ(kept_ids(items, ov, 0.3), (std::vector<std::size_t>{2}));
}

TEST(Nms, PairwiseBoundAndMonotoneRelabelling) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coord(0, 40);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box> boxes;
    std::vector<ScoredItem> items, squashed;
    for (std::size_t i = 0; i < 12; ++i) {
      const int x = coord(rng), y = coord(rng);
      boxes.push_back({x, y, x + 8 + coord(rng) / 4, y + 8 + coord(rng) / 4});
      const double s = score(rng);
      items.push_back({i, s});
      squashed.push_back({i, std::exp(3.0 * s) - 7.0});
    }
    auto ov = [&](std::size_t a, std::size_t b) { return box_iou(boxes[a], boxes[b]); };
    for (double thr : {0.3, 0.7}) {
      const auto kept = nms(items, ov, thr);
      for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LE(ov(kept[i], kept[j]), thr);
      EXPECT_EQ(kept, nms(squashed, ov, thr));
    }
  }
}
