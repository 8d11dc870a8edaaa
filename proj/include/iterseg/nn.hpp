#pragma once

// Fixed-op numerical kernel: convolution, pointwise nonlinearities, bilinear
// resampling, channel concatenation, weighted binary cross-entropy and SGD
// with momentum. Every forward op has an explicit backward.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/tensor.hpp"

namespace iterseg {

struct LayerParams {
  Tensor kernel;  // (out_ch, in_ch, kh, kw)
  std::vector<double> bias;

  LayerParams() = default;
  LayerParams(std::size_t out_ch, std::size_t in_ch, std::size_t kh,
              std::size_t kw)
      : kernel(Dims{out_ch, in_ch, kh, kw}), bias(out_ch, 0.0) {}

  std::size_t out_channels() const { return kernel.dims().batch; }
  std::size_t in_channels() const { return kernel.dims().channels; }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

namespace detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t in_ch, in_h, in_w, kh, kw, stride, pad, out_h, out_w;

  std::size_t patch_rows() const { return in_ch * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad == 0;
  }
};

inline ConvGeometry conv_geometry(const Dims& in, const LayerParams& params,
                                  std::size_t stride, std::size_t pad) {
  const Dims& k = params.kernel.dims();
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in.channels != k.channels)
    throw ConfigError("conv2d: input has " + std::to_string(in.channels) +
                      " channels but kernel " + k.str() + " expects " +
                      std::to_string(k.channels));
  if (params.bias.size() != k.batch)
    throw ConfigError("conv2d: bias length " +
                      std::to_string(params.bias.size()) +
                      " does not match kernel " + k.str());
  const long h = static_cast<long>(in.height + 2 * pad) - static_cast<long>(k.height);
  const long w = static_cast<long>(in.width + 2 * pad) - static_cast<long>(k.width);
  if (h < 0 || w < 0)
    throw ConfigError("conv2d: kernel " + k.str() + " larger than padded input " +
                      in.str());
  return {in.channels, in.height, in.width, k.height, k.width, stride, pad,
          static_cast<std::size_t>(h) / stride + 1,
          static_cast<std::size_t>(w) / stride + 1};
}

// cols has shape (in_ch*kh*kw, out_h*out_w).
inline void im2col(const double* src, const ConvGeometry& g, double* cols) {
  const long pad = static_cast<long>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const double* plane = src + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        double* dst = cols + row * g.out_plane();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill_n(dst + oy * g.out_w, g.out_w, 0.0);
            continue;
          }
          const double* src_row = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            dst[oy * g.out_w + ox] =
                (ix < 0 || ix >= static_cast<long>(g.in_w))
                    ? 0.0
                    : src_row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates into dst.
inline void col2im(const double* cols, const ConvGeometry& g, double* dst) {
  const long pad = static_cast<long>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    double* plane = dst + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        const double* src = cols + row * g.out_plane();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          double* dst_row = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.in_w))
              dst_row[static_cast<std::size_t>(ix)] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation with zero padding.
inline Tensor conv2d(const Tensor& input, const LayerParams& params,
                     std::size_t stride, std::size_t pad) {
  const auto g = detail::conv_geometry(input.dims(), params, stride, pad);
  const std::size_t out_ch = params.out_channels();
  Tensor out(Dims{input.dims().batch, out_ch, g.out_h, g.out_w});

  detail::ConstMatrixMap kernel(params.kernel.data(),
                                static_cast<Eigen::Index>(out_ch),
                                static_cast<Eigen::Index>(g.patch_rows()));
  std::vector<double> cols(g.pointwise() ? 0 : g.patch_rows() * g.out_plane());
  for (std::size_t n = 0; n < input.dims().batch; ++n) {
    const double* src = input.item(n).data();
    if (!g.pointwise()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    detail::ConstMatrixMap patches(src, static_cast<Eigen::Index>(g.patch_rows()),
                                   static_cast<Eigen::Index>(g.out_plane()));
    detail::MatrixMap result(out.item(n).data(),
                             static_cast<Eigen::Index>(out_ch),
                             static_cast<Eigen::Index>(g.out_plane()));
    result.noalias() = kernel * patches;
    for (std::size_t o = 0; o < out_ch; ++o)
      result.row(static_cast<Eigen::Index>(o)).array() += params.bias[o];
  }
  return out;
}

struct Conv2dGrads {
  Tensor input;
  LayerParams params;
};

// Gradients of a scalar loss given d loss / d output. The input gradient is
// skipped when want_input is false (first layer during training).
inline Conv2dGrads conv2d_backward(const Tensor& input, const LayerParams& params,
                                   std::size_t stride, std::size_t pad,
                                   const Tensor& grad_out, bool want_input = true) {
  const auto g = detail::conv_geometry(input.dims(), params, stride, pad);
  const std::size_t out_ch = params.out_channels();
  const Dims expected{input.dims().batch, out_ch, g.out_h, g.out_w};
  if (grad_out.dims() != expected)
    throw ConfigError("conv2d_backward: gradient dims " + grad_out.dims().str() +
                      " do not match output dims " + expected.str());

  Conv2dGrads grads;
  grads.params = LayerParams(out_ch, g.in_ch, g.kh, g.kw);
  if (want_input) grads.input = Tensor(input.dims());

  const auto rows = static_cast<Eigen::Index>(g.patch_rows());
  const auto cols_n = static_cast<Eigen::Index>(g.out_plane());
  detail::ConstMatrixMap kernel(params.kernel.data(),
                                static_cast<Eigen::Index>(out_ch), rows);
  detail::MatrixMap dkernel(grads.params.kernel.data(),
                            static_cast<Eigen::Index>(out_ch), rows);
  std::vector<double> cols(g.pointwise() ? 0 : g.patch_rows() * g.out_plane());
  std::vector<double> dcols(g.pointwise() || !want_input ? 0 : cols.size());

  for (std::size_t n = 0; n < input.dims().batch; ++n) {
    const double* src = input.item(n).data();
    if (!g.pointwise()) {
      detail::im2col(src, g, cols.data());
      src = cols.data();
    }
    detail::ConstMatrixMap patches(src, rows, cols_n);
    detail::ConstMatrixMap gout(grad_out.item(n).data(),
                                static_cast<Eigen::Index>(out_ch), cols_n);
    dkernel.noalias() += gout * patches.transpose();
    const double* go = grad_out.item(n).data();
    for (std::size_t o = 0; o < out_ch; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < g.out_plane(); ++j) acc += go[o * g.out_plane() + j];
      grads.params.bias[o] += acc;
    }
    if (!want_input) continue;
    if (g.pointwise()) {
      detail::MatrixMap din(grads.input.item(n).data(), rows, cols_n);
      din.noalias() = kernel.transpose() * gout;
    } else {
      detail::MatrixMap dpatches(dcols.data(), rows, cols_n);
      dpatches.noalias() = kernel.transpose() * gout;
      detail::col2im(dcols.data(), g, grads.input.item(n).data());
    }
  }
  return grads;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

// Uses the forward output: gradient passes where output > 0.
inline Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor g = grad_out;
  auto o = output.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i)
    if (!(o[i] > 0.0)) gv[i] = 0.0;
  return g;
}

// Rounded results stay strictly inside (0, 1).
inline double sigmoid(double z) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  return std::clamp(s, lo, hi);
}

inline Tensor sigmoid(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = sigmoid(v);
  return out;
}

inline Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  Tensor g = grad_out;
  auto o = output.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= o[i] * (1.0 - o[i]);
  return g;
}

// 1-D interpolation taps for half-pixel centres with edge clamping:
// src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
struct LinearTap {
  std::size_t lo;
  std::size_t hi;
  double w_lo;
  double w_hi;
};

inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double max_src = static_cast<double>(in - 1);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, max_src);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[i] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

// Resample one plane. Row-then-column evaluation order is fixed so results
// are reproducible bit-for-bit.
inline void bilinear_plane(std::span<const double> in, std::size_t in_h,
                           std::size_t in_w, std::span<double> out,
                           const std::vector<LinearTap>& ty,
                           const std::vector<LinearTap>& tx) {
  const std::size_t out_w = tx.size();
  for (std::size_t y = 0; y < ty.size(); ++y) {
    const double* r0 = in.data() + ty[y].lo * in_w;
    const double* r1 = in.data() + ty[y].hi * in_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const LinearTap& t = tx[x];
      const double top = t.w_lo * r0[t.lo] + t.w_hi * r0[t.hi];
      const double bottom = t.w_lo * r1[t.lo] + t.w_hi * r1[t.hi];
      out[y * out_w + x] = ty[y].w_lo * top + ty[y].w_hi * bottom;
    }
  }
  (void)in_h;
}

// Exact transpose of bilinear_plane; accumulates into `in_grad`.
inline void bilinear_plane_transpose(std::span<const double> out_grad,
                                     std::size_t in_w, std::span<double> in_grad,
                                     const std::vector<LinearTap>& ty,
                                     const std::vector<LinearTap>& tx) {
  const std::size_t out_w = tx.size();
  for (std::size_t y = 0; y < ty.size(); ++y) {
    double* r0 = in_grad.data() + ty[y].lo * in_w;
    double* r1 = in_grad.data() + ty[y].hi * in_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const LinearTap& t = tx[x];
      const double g = out_grad[y * out_w + x];
      const double top = ty[y].w_lo * g;
      const double bottom = ty[y].w_hi * g;
      r0[t.lo] += t.w_lo * top;
      r0[t.hi] += t.w_hi * top;
      r1[t.lo] += t.w_lo * bottom;
      r1[t.hi] += t.w_hi * bottom;
    }
  }
}

inline Tensor bilinear_resize(const Tensor& input, long out_h, long out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw ConfigError("bilinear_resize: target dims " + std::to_string(out_h) +
                      "x" + std::to_string(out_w) + " must be positive");
  const Dims& d = input.dims();
  if (d.height == 0 || d.width == 0)
    throw ConfigError("bilinear_resize: empty input " + d.str());
  const auto oh = static_cast<std::size_t>(out_h);
  const auto ow = static_cast<std::size_t>(out_w);
  Tensor out(Dims{d.batch, d.channels, oh, ow});
  const auto ty = linear_taps(d.height, oh);
  const auto tx = linear_taps(d.width, ow);
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.channels; ++c)
      bilinear_plane(input.plane(n, c), d.height, d.width, out.plane(n, c), ty, tx);
  return out;
}

// Transpose of bilinear_resize from (in_h, in_w) to grad_out's spatial dims.
inline Tensor bilinear_resize_backward(const Tensor& grad_out, std::size_t in_h,
                                       std::size_t in_w) {
  const Dims& d = grad_out.dims();
  Tensor g(Dims{d.batch, d.channels, in_h, in_w});
  const auto ty = linear_taps(in_h, d.height);
  const auto tx = linear_taps(in_w, d.width);
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.channels; ++c)
      bilinear_plane_transpose(grad_out.plane(n, c), in_w, g.plane(n, c), ty, tx);
  return g;
}

inline Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  Dims d = parts.front().dims();
  d.channels = 0;
  for (const Tensor& p : parts) {
    const Dims& pd = p.dims();
    if (pd.batch != d.batch || pd.height != d.height || pd.width != d.width)
      throw ConfigError("concat_channels: dims " + pd.str() +
                        " incompatible with " + parts.front().dims().str());
    d.channels += pd.channels;
  }
  Tensor out(d);
  for (std::size_t n = 0; n < d.batch; ++n) {
    double* dst = out.item(n).data();
    for (const Tensor& p : parts) {
      auto src = p.item(n);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

// Splits a channel-concatenated gradient back into per-part gradients.
inline std::vector<Tensor> split_channels(const Tensor& joined,
                                          std::span<const std::size_t> channels) {
  const Dims& d = joined.dims();
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Dims{d.batch, c, d.height, d.width});
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double* src = joined.item(n).data();
    for (Tensor& p : parts) {
      auto dst = p.item(n);
      std::copy(src, src + dst.size(), dst.begin());
      src += dst.size();
    }
  }
  return parts;
}

inline constexpr double kBceEpsilon = 1e-7;

struct BceResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d pred
};

// loss = sum_s w_s * sum_pixels -[t log p + (1 - t) log(1 - p)] with p clamped
// to [eps, 1 - eps]. The gradient is that of the clamped expression, so it is
// zero where the clamp is active.
inline BceResult weighted_bce(const Tensor& pred, const Tensor& target,
                              std::span<const double> sample_weights) {
  const Dims& d = pred.dims();
  if (target.dims() != d)
    throw ConfigError("weighted_bce: pred " + d.str() + " vs target " +
                      target.dims().str());
  if (sample_weights.size() != d.batch)
    throw ConfigError("weighted_bce: " + std::to_string(sample_weights.size()) +
                      " weights for batch of " + std::to_string(d.batch));
  BceResult r;
  r.grad = Tensor(d);
  const std::size_t per_item = d.channels * d.plane();
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double w = sample_weights[n];
    if (!(w > 0.0)) throw DataError("weighted_bce: sample weight must be positive");
    auto p = pred.item(n);
    auto t = target.item(n);
    auto g = r.grad.item(n);
    double item_loss = 0.0;
    for (std::size_t i = 0; i < per_item; ++i) {
      const double ti = t[i];
      if (ti != 0.0 && ti != 1.0)
        throw DataError("weighted_bce: target value " + std::to_string(ti) +
                        " outside {0,1}");
      const double raw = p[i];
      const double pc = std::clamp(raw, kBceEpsilon, 1.0 - kBceEpsilon);
      const bool clamped = pc != raw;
      if (ti == 1.0) {
        item_loss -= std::log(pc);
        g[i] = clamped ? 0.0 : -w / pc;
      } else {
        item_loss -= std::log1p(-pc);
        g[i] = clamped ? 0.0 : w / (1.0 - pc);
      }
    }
    r.loss += w * item_loss;
  }
  return r;
}

struct OptimizerState {
  std::vector<std::vector<double>> velocity;
  double learning_rate = 0.0;
  double momentum = 0.0;

  OptimizerState() = default;
  OptimizerState(std::span<const std::size_t> sizes, double lr, double mu)
      : learning_rate(lr), momentum(mu) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    velocity.reserve(sizes.size());
    for (std::size_t s : sizes) velocity.emplace_back(s, 0.0);
  }
};

// Heavy-ball momentum: v <- mu v - lr g; w <- w + v.
inline void sgd_step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads,
                     OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw ConfigError("sgd_step: parameter/gradient/velocity array counts differ");
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto w = params[a];
    auto g = grads[a];
    auto& v = state.velocity[a];
    if (w.size() != g.size() || w.size() != v.size())
      throw ConfigError("sgd_step: shape mismatch in array " + std::to_string(a));
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state.momentum * v[i] - state.learning_rate * g[i];
      w[i] += v[i];
    }
  }
}

}  // namespace iterseg
