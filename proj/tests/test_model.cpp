#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "iterseg/checkpoint.hpp"
#include "iterseg/dataset.hpp"
#include "iterseg/model.hpp"
#include "support.hpp"

using namespace iterseg;
using namespace testing_support;

namespace {

std::vector<double> parse_csv(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string line, cell;
  while (std::getline(ss, line)) {
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
  }
  return v;
}

double category_plane_value(const Tensor& t, std::size_t category) {
  return t(0, kImageChannels + category, 5, 7);
}

}  // namespace

TEST(EncodeInput, InitialHeatmapMapsToOneHalf) {
  const ArchDescriptor a = small_arch();
  const Tensor t = encode_input(a, pattern_patch(16), constant_heatmap(8, 0.5), 1);
  for (double v : t.plane(0, kImageChannels + 1)) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(EncodeInput, AffineEndpoints) {
  const ArchDescriptor a = small_arch();
  const Tensor lo = encode_input(a, pattern_patch(16), constant_heatmap(8, 0.0), 0);
  const Tensor hi = encode_input(a, pattern_patch(16), constant_heatmap(8, 1.0), 0);
  for (double v : lo.plane(0, kImageChannels)) EXPECT_DOUBLE_EQ(v, -127.0);
  for (double v : hi.plane(0, kImageChannels)) EXPECT_DOUBLE_EQ(v, 128.0);
}

TEST(EncodeInput, PlacementAndImageCentering) {
  const ArchDescriptor a = small_arch();
  const RgbImage img = pattern_patch(16);
  const Tensor t = encode_input(a, img, pattern_heatmap(8), 2);
  for (std::size_t c : {3u, 4u, 6u})
    for (double v : t.plane(0, c)) EXPECT_EQ(v, 0.0);
  EXPECT_NE(category_plane_value(t, 2), 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_EQ(t(0, c, 3, 9), static_cast<double>(img.at(9, 3, c)) - 127.0);
  for (double v : t.values()) {
    EXPECT_GE(v, -127.0);
    EXPECT_LE(v, 128.0);
  }
}

TEST(EncodeInput, CategoryExclusivity) {
  const ArchDescriptor a = small_arch();
  for (std::size_t cat = 0; cat < a.num_categories; ++cat) {
    const Tensor t = encode_input(a, pattern_patch(16), pattern_heatmap(8), cat);
    std::size_t nonzero_channels = 0;
    for (std::size_t k = 0; k < a.num_categories; ++k) {
      bool any = false;
      for (double v : t.plane(0, kImageChannels + k)) any = any || v != 0.0;
      nonzero_channels += any;
    }
    EXPECT_LE(nonzero_channels, 1u);
  }
}

TEST(EncodeInput, CategoryOutOfRangeIsDataError) {
  EXPECT_THROW(encode_input(small_arch(), pattern_patch(16), pattern_heatmap(8), 4), DataError);
}

TEST(PredictHeatmap, ZeroNetGivesOneHalf) {
  const SegNet net(small_arch());
  const Heatmap h =
      predict_heatmap(net, encode_input(small_arch(), pattern_patch(16), pattern_heatmap(8), 0));
  ASSERT_EQ(h.width, 8u);
  for (double v : h.values) EXPECT_EQ(v, 0.5);
}

TEST(PredictHeatmap, DeterministicAndPure) {
  const SegNet net = golden_net();
  const SegNet copy = net;
  const Tensor in = encode_input(small_arch(), pattern_patch(16), pattern_heatmap(8), 3);
  const Heatmap a = predict_heatmap(net, in);
  const Heatmap b = predict_heatmap(net, in);
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(net == copy);
}

TEST(PredictHeatmap, OutputStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SegNet net = init_params(small_arch(), seed, 3.0);
    for (std::size_t cat = 0; cat < 4; ++cat) {
      const Heatmap h =
          predict_heatmap(net, encode_input(small_arch(), pattern_patch(16), pattern_heatmap(8), cat));
      for (double v : h.values) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
}

TEST(PredictHeatmap, DimsMismatchIsConfigError) {
  const SegNet net(small_arch());
  EXPECT_THROW(predict_heatmap(net, Tensor(Dims{1, 7, 32, 32})), ConfigError);
  EXPECT_THROW(encode_input(small_arch(), pattern_patch(32), pattern_heatmap(8), 0), ConfigError);
}

TEST(PredictHeatmap, MatchesGoldenFile) {
  const SegNet net = load_checkpoint(golden_dir() / "model.ckpt");
  const std::vector<double> expected = parse_csv(read_text(golden_dir() / "model_heatmap.csv"));
  const Heatmap h = predict_heatmap(
      net, encode_input(net.arch(), pattern_patch(16), pattern_heatmap(8), kGoldenCategory));
  ASSERT_EQ(h.values.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_LT(std::abs(h.values[i] - expected[i]), 1e-10);
  EXPECT_TRUE(net == golden_net());
}

TEST(SegNetBackward, BeforeForwardIsUsageError) {
  const SegNet net(small_arch());
  ForwardTape empty;
  EXPECT_THROW(net.backward(empty, Tensor(Dims{1, 1, 8, 8})), UsageError);
}

TEST(SegNetBackward, ZeroUpstreamGivesZeroGradients) {
  const SegNet net = golden_net();
  ForwardTape tape;
  const Tensor in = encode_input(small_arch(), pattern_patch(16), pattern_heatmap(8), 1);
  const Tensor out = net.forward(in, &tape);
  const SegNetGrads g = net.backward(tape, Tensor(out.dims()), true);
  for (auto arr : gradient_arrays(g))
    for (double v : arr) EXPECT_EQ(v, 0.0);
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
}

// Permuting the active category and the matching first-layer weight slices
// together leaves the output unchanged.
TEST(SegNet, CategoryPermutationEquivariance) {
  const SegNet net = golden_net();
  const std::size_t c = net.arch().num_categories;
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  SegNet permuted = net;
  auto& k = permuted.layers()[0].kernel;
  const auto& k0 = net.layers()[0].kernel;
  const Dims d = k.dims();
  for (std::size_t o = 0; o < d.batch; ++o)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x)
          k(o, kImageChannels + perm[j], y, x) = k0(o, kImageChannels + j, y, x);
  for (std::size_t j = 0; j < c; ++j) {
    const Heatmap a =
        predict_heatmap(net, encode_input(net.arch(), pattern_patch(16), pattern_heatmap(8), j));
    const Heatmap b = predict_heatmap(
        permuted, encode_input(net.arch(), pattern_patch(16), pattern_heatmap(8), perm[j]));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-14);
  }
}

TEST(InitParams, ReproducibleAndZeroBias) {
  const ArchDescriptor a;
  const SegNet x = init_params(a, 9), y = init_params(a, 9), z = init_params(a, 10);
  EXPECT_TRUE(x == y);
  EXPECT_FALSE(x == z);
  for (const auto& l : x.layers())
    for (double b : l.bias) EXPECT_EQ(b, 0.0);
}

TEST(InitParams, CategoryChannelStdMatchesImageChannels) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SegNet net = init_params(ArchDescriptor{}, seed);
    const Tensor& k = net.layers()[0].kernel;
    const Dims d = k.dims();
    auto spread = [&](std::size_t c0, std::size_t c1) {
      double s = 0.0, s2 = 0.0;
      std::size_t n = 0;
      for (std::size_t o = 0; o < d.batch; ++o)
        for (std::size_t c = c0; c < c1; ++c)
          for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
              s += k(o, c, y, x);
              s2 += k(o, c, y, x) * k(o, c, y, x);
              ++n;
            }
      const double m = s / static_cast<double>(n);
      return std::sqrt(s2 / static_cast<double>(n) - m * m);
    };
    const double img = spread(0, kImageChannels), cat = spread(kImageChannels, d.channels);
    EXPECT_LT(std::abs(cat - img) / img, 0.2) << "seed " << seed;
  }
}

TEST(ArchDescriptor, Validation) {
  ArchDescriptor a;
  EXPECT_NO_THROW(a.validate());
  a.patch_size = 48;
  EXPECT_THROW(a.validate(), ConfigError);
  a = ArchDescriptor{};
  a.heatmap_size = 64;
  EXPECT_THROW(a.validate(), ConfigError);
  a = ArchDescriptor{};
  a.num_categories = 0;
  EXPECT_THROW(a.validate(), ConfigError);
  a = ArchDescriptor{};
  a.blocks[1].stride = 0;
  EXPECT_THROW(a.validate(), ConfigError);
}
