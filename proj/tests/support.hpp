#pragma once

// Shared fixtures for the test suite.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "iterseg/model.hpp"
#include "iterseg/synth.hpp"

namespace testing_support {

inline std::filesystem::path golden_dir() { return ITERSEG_GOLDEN_DIR; }

inline iterseg::ArchDescriptor small_arch() {
  iterseg::ArchDescriptor a;
  a.patch_size = 16;
  a.heatmap_size = 8;
  return a;
}

// Deterministic patch content for a given size.
inline iterseg::RgbImage pattern_patch(std::size_t p) {
  iterseg::RgbImage img(p, p);
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>((x * 13 + y * 7 + c * 50) % 256);
  return img;
}

inline iterseg::Heatmap pattern_heatmap(std::size_t h) {
  iterseg::Heatmap m(h, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < h; ++x)
      m(x, y) = static_cast<double>(x + y) / static_cast<double>(2 * (h - 1));
  return m;
}

// Small net with non-zero biases.
inline iterseg::SegNet golden_net() {
  iterseg::SegNet net = iterseg::init_params(small_arch(), 42);
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& l : net.layers())
    for (double& b : l.bias) b = n(rng);
  return net;
}

inline constexpr std::size_t kGoldenCategory = 2;
inline constexpr std::uint64_t kGoldenSceneSeed = 0x5eed0007ULL;

}  // namespace testing_support
