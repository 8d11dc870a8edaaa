#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "iterseg/error.hpp"

namespace iterseg {

// (batch, channels, height, width). Kernels reuse the layout as
// (out_channels, in_channels, kh, kw).
struct Dims {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return batch * channels * height * width; }
  std::size_t plane() const { return height * width; }

  std::string str() const {
    std::ostringstream os;
    os << batch << "x" << channels << "x" << height << "x" << width;
    return os.str();
  }

  friend bool operator==(const Dims&, const Dims&) = default;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0)
      : dims_(dims), values_(dims.count(), fill) {}
  Tensor(Dims dims, std::vector<double> values)
      : dims_(dims), values_(std::move(values)) {
    if (values_.size() != dims_.count())
      throw ConfigError("tensor value count " + std::to_string(values_.size()) +
                        " does not match dims " + dims_.str());
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return values_[offset(n, c, y, x)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const {
    return values_[offset(n, c, y, x)];
  }

  std::span<double> plane(std::size_t n, std::size_t c) {
    return {values_.data() + offset(n, c, 0, 0), dims_.plane()};
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return {values_.data() + offset(n, c, 0, 0), dims_.plane()};
  }

  // All channels of one batch item.
  std::span<double> item(std::size_t n) {
    return {values_.data() + offset(n, 0, 0, 0), dims_.channels * dims_.plane()};
  }
  std::span<const double> item(std::size_t n) const {
    return {values_.data() + offset(n, 0, 0, 0), dims_.channels * dims_.plane()};
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::size_t n, std::size_t c, std::size_t y,
                     std::size_t x) const {
    return ((n * dims_.channels + c) * dims_.height + y) * dims_.width + x;
  }

  Dims dims_;
  std::vector<double> values_;
};

}  // namespace iterseg
