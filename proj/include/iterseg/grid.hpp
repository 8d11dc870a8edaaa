#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace iterseg {

// Dense row-major 2-D grid. Used for heatmaps, binary masks and label maps.
template <typename T>
struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::size_t w, std::size_t h, T fill = T{})
      : width(w), height(h), values(w * h, fill) {}

  T& operator()(std::size_t x, std::size_t y) { return values[y * width + x]; }
  const T& operator()(std::size_t x, std::size_t y) const {
    return values[y * width + x];
  }
  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Heatmap = Grid<double>;
using Mask = Grid<std::uint8_t>;  // 0 or 1
using LabelMap = Grid<int>;

// Interleaved 8-bit RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h)
      : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Half-open integer box [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const {
    return empty() ? 0 : static_cast<long>(width()) * static_cast<long>(height());
  }
  bool empty() const { return x1 <= x0 || y1 <= y0; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double box_iou(const Box& a, const Box& b) {
  const Box inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0),
                  std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const long i = inter.area();
  const long u = a.area() + b.area() - i;
  return u > 0 ? static_cast<double>(i) / static_cast<double>(u) : 0.0;
}

inline std::size_t count_foreground(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.values) n += v != 0;
  return n;
}

// Tight box of the nonzero cells; empty box when the mask is empty.
inline Box tight_box(const Mask& m) {
  Box b{static_cast<int>(m.width), static_cast<int>(m.height), 0, 0};
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m(x, y)) {
        b.x0 = std::min(b.x0, static_cast<int>(x));
        b.y0 = std::min(b.y0, static_cast<int>(y));
        b.x1 = std::max(b.x1, static_cast<int>(x) + 1);
        b.y1 = std::max(b.y1, static_cast<int>(y) + 1);
      }
  if (b.empty()) return Box{};
  return b;
}

}  // namespace iterseg
