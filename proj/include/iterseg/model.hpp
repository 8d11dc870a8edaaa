#pragma once

// The segmentation network f: three strided conv blocks whose outputs are
// upsampled to the heatmap resolution and concatenated (hypercolumn), then a
// 1x1 hidden layer and a 1x1 sigmoid output.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"
#include "iterseg/nn.hpp"
#include "iterseg/tensor.hpp"

namespace iterseg {

inline constexpr std::size_t kImageChannels = 3;
// Image channels and heatmap channels are both centred into [-127, 128].
inline constexpr double kInputScale = 128.0;

struct BlockSpec {
  std::size_t channels = 0;
  std::size_t stride = 1;
  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct ArchDescriptor {
  std::size_t patch_size = 64;
  std::size_t heatmap_size = 32;
  std::size_t num_categories = 4;
  std::size_t kernel_size = 3;
  std::vector<BlockSpec> blocks{{16, 2}, {32, 2}, {64, 2}};
  std::size_t head_width = 64;

  std::size_t input_channels() const { return kImageChannels + num_categories; }
  std::size_t hypercolumn_channels() const {
    std::size_t c = 0;
    for (const auto& b : blocks) c += b.channels;
    return c;
  }
  std::size_t padding() const { return kernel_size / 2; }

  // Spatial size after each block.
  std::vector<std::size_t> block_sizes() const {
    std::vector<std::size_t> sizes;
    long s = static_cast<long>(patch_size);
    for (const auto& b : blocks) {
      s = (s + 2 * static_cast<long>(padding()) - static_cast<long>(kernel_size)) /
              static_cast<long>(b.stride) +
          1;
      sizes.push_back(s > 0 ? static_cast<std::size_t>(s) : 0);
    }
    return sizes;
  }

  void validate() const {
    auto pow2 = [](std::size_t v) { return v > 0 && (v & (v - 1)) == 0; };
    if (!pow2(patch_size) || !pow2(heatmap_size))
      throw ConfigError("patch_size and heatmap_size must be powers of two (got " +
                        std::to_string(patch_size) + ", " +
                        std::to_string(heatmap_size) + ")");
    if (patch_size <= heatmap_size)
      throw ConfigError("patch_size must exceed heatmap_size");
    if (num_categories < 1) throw ConfigError("num_categories must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("kernel_size must be odd");
    if (blocks.empty()) throw ConfigError("at least one conv block is required");
    if (head_width < 1) throw ConfigError("head_width must be >= 1");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].channels < 1 || blocks[i].stride < 1)
        throw ConfigError("block " + std::to_string(i) +
                          " needs positive channels and stride");
    }
    for (std::size_t s : block_sizes())
      if (s == 0) throw ConfigError("a conv block produces empty output");
  }

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

struct SegNetGrads {
  std::vector<LayerParams> layers;
  Tensor input;  // empty unless requested
};

// Activations recorded by a forward pass, consumed by backward.
struct ForwardTape {
  bool recorded = false;
  Tensor input;
  std::vector<Tensor> block_out;  // post-ReLU
  Tensor hypercolumn;
  Tensor hidden;  // post-ReLU
  Tensor output;  // sigmoid
};

class SegNet {
 public:
  SegNet() = default;
  explicit SegNet(ArchDescriptor arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t in = arch_.input_channels();
    for (const auto& b : arch_.blocks) {
      layers_.emplace_back(b.channels, in, arch_.kernel_size, arch_.kernel_size);
      in = b.channels;
    }
    layers_.emplace_back(arch_.head_width, arch_.hypercolumn_channels(), 1, 1);
    layers_.emplace_back(1, arch_.head_width, 1, 1);
  }

  const ArchDescriptor& arch() const { return arch_; }
  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }

  Dims input_dims(std::size_t batch) const {
    return {batch, arch_.input_channels(), arch_.patch_size, arch_.patch_size};
  }

  // Kernel then bias for each layer; the order used by optimizer state and
  // checkpoints.
  std::vector<std::span<double>> parameter_arrays() {
    std::vector<std::span<double>> out;
    for (auto& l : layers_) {
      out.emplace_back(l.kernel.values());
      out.emplace_back(l.bias);
    }
    return out;
  }
  std::vector<std::span<const double>> parameter_arrays() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers_) {
      out.emplace_back(l.kernel.values());
      out.emplace_back(l.bias);
    }
    return out;
  }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string base = i < arch_.blocks.size()
                                   ? "block" + std::to_string(i + 1)
                                   : (i == arch_.blocks.size() ? "head_hidden" : "head_out");
      names.push_back(base + ".kernel");
      names.push_back(base + ".bias");
    }
    return names;
  }
  std::vector<std::size_t> parameter_sizes() const {
    std::vector<std::size_t> sizes;
    for (const auto& a : parameter_arrays()) sizes.push_back(a.size());
    return sizes;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t s : parameter_sizes()) n += s;
    return n;
  }

  // (N, 3 + C, P, P) -> (N, 1, H, H) in (0, 1).
  Tensor forward(const Tensor& input, ForwardTape* tape = nullptr) const {
    const Dims& d = input.dims();
    if (d.channels != arch_.input_channels() || d.height != arch_.patch_size ||
        d.width != arch_.patch_size)
      throw ConfigError("SegNet input dims " + d.str() + " do not match arch " +
                        input_dims(d.batch).str());
    const auto hm = static_cast<long>(arch_.heatmap_size);
    std::vector<Tensor> block_out;
    std::vector<Tensor> upsampled;
    const Tensor* x = &input;
    for (std::size_t b = 0; b < arch_.blocks.size(); ++b) {
      block_out.push_back(
          relu(conv2d(*x, layers_[b], arch_.blocks[b].stride, arch_.padding())));
      x = &block_out.back();
      upsampled.push_back(bilinear_resize(*x, hm, hm));
    }
    Tensor hyper = concat_channels(upsampled);
    const std::size_t nb = arch_.blocks.size();
    Tensor hidden = relu(conv2d(hyper, layers_[nb], 1, 0));
    Tensor output = sigmoid(conv2d(hidden, layers_[nb + 1], 1, 0));
    if (tape) {
      tape->recorded = true;
      tape->input = input;
      tape->block_out = std::move(block_out);
      tape->hypercolumn = std::move(hyper);
      tape->hidden = std::move(hidden);
      tape->output = output;
    }
    return output;
  }

  // Gradients given d loss / d output for the pass recorded in `tape`.
  SegNetGrads backward(const ForwardTape& tape, const Tensor& grad_output,
                       bool want_input = false) const {
    if (!tape.recorded) throw UsageError("SegNet::backward called before forward");
    if (grad_output.dims() != tape.output.dims())
      throw ConfigError("SegNet::backward: gradient dims " +
                        grad_output.dims().str() + " vs output " +
                        tape.output.dims().str());
    const std::size_t nb = arch_.blocks.size();
    SegNetGrads grads;
    grads.layers.resize(layers_.size());

    Tensor g = sigmoid_backward(tape.output, grad_output);
    auto out_g = conv2d_backward(tape.hidden, layers_[nb + 1], 1, 0, g);
    grads.layers[nb + 1] = std::move(out_g.params);
    g = relu_backward(tape.hidden, out_g.input);
    auto hid_g = conv2d_backward(tape.hypercolumn, layers_[nb], 1, 0, g);
    grads.layers[nb] = std::move(hid_g.params);

    std::vector<std::size_t> chans;
    for (const auto& b : arch_.blocks) chans.push_back(b.channels);
    std::vector<Tensor> up_grads = split_channels(hid_g.input, chans);

    Tensor carried;  // gradient flowing into block b's output from block b+1
    for (std::size_t b = nb; b-- > 0;) {
      const Tensor& out = tape.block_out[b];
      Tensor gb = bilinear_resize_backward(up_grads[b], out.dims().height,
                                           out.dims().width);
      if (carried.size() != 0) {
        auto gv = gb.values();
        auto cv = carried.values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += cv[i];
      }
      gb = relu_backward(out, gb);
      const Tensor& in = b == 0 ? tape.input : tape.block_out[b - 1];
      const bool need_input = b > 0 || want_input;
      auto cg = conv2d_backward(in, layers_[b], arch_.blocks[b].stride,
                                arch_.padding(), gb, need_input);
      grads.layers[b] = std::move(cg.params);
      if (b > 0)
        carried = std::move(cg.input);
      else if (want_input)
        grads.input = std::move(cg.input);
    }
    return grads;
  }

  friend bool operator==(const SegNet&, const SegNet&) = default;

 private:
  ArchDescriptor arch_;
  std::vector<LayerParams> layers_;
};

inline std::vector<std::span<const double>> gradient_arrays(const SegNetGrads& g) {
  std::vector<std::span<const double>> out;
  for (const auto& l : g.layers) {
    out.emplace_back(l.kernel.values());
    out.emplace_back(l.bias);
  }
  return out;
}

// Writes one encoded sample into batch slot `n` of `dst`: image channels as
// (pixel - 127), the previous heatmap upsampled to P x P and mapped through
// 255 h - 127 into channel 3 + category, every other category channel zero.
inline void encode_input_into(Tensor& dst, std::size_t n, const ArchDescriptor& arch,
                              const RgbImage& patch, const Heatmap& prev,
                              std::size_t category) {
  const std::size_t p = arch.patch_size;
  if (category >= arch.num_categories)
    throw DataError("category " + std::to_string(category) + " outside [0, " +
                    std::to_string(arch.num_categories) + ")");
  if (patch.width != p || patch.height != p)
    throw ConfigError("patch is " + std::to_string(patch.width) + "x" +
                      std::to_string(patch.height) + ", expected " +
                      std::to_string(p) + "x" + std::to_string(p));
  if (prev.width != arch.heatmap_size || prev.height != arch.heatmap_size)
    throw ConfigError("previous heatmap is " + std::to_string(prev.width) + "x" +
                      std::to_string(prev.height) + ", expected " +
                      std::to_string(arch.heatmap_size));
  const Dims& d = dst.dims();
  if (d.channels != arch.input_channels() || d.height != p || d.width != p ||
      n >= d.batch)
    throw ConfigError("encode target dims " + d.str() + " do not fit the arch");

  for (std::size_t c = 0; c < kImageChannels; ++c) {
    auto plane = dst.plane(n, c);
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x)
        plane[y * p + x] = static_cast<double>(patch.at(x, y, c)) - 127.0;
  }
  for (std::size_t k = 0; k < arch.num_categories; ++k) {
    auto plane = dst.plane(n, kImageChannels + k);
    std::fill(plane.begin(), plane.end(), 0.0);
  }
  const std::size_t h = arch.heatmap_size;
  Tensor small(Dims{1, 1, h, h}, prev.values);
  Tensor big = bilinear_resize(small, static_cast<long>(p), static_cast<long>(p));
  auto plane = dst.plane(n, kImageChannels + category);
  auto src = big.values();
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = 255.0 * src[i] - 127.0;
}

inline Tensor encode_input(const ArchDescriptor& arch, const RgbImage& patch,
                           const Heatmap& prev, std::size_t category) {
  Tensor t(Dims{1, arch.input_channels(), arch.patch_size, arch.patch_size});
  encode_input_into(t, 0, arch, patch, prev, category);
  return t;
}

inline Heatmap constant_heatmap(std::size_t size, double value) {
  return Heatmap(size, size, value);
}

inline Heatmap heatmap_from_output(const Tensor& output, std::size_t n) {
  const Dims& d = output.dims();
  Heatmap h(d.width, d.height);
  auto src = output.plane(n, 0);
  std::copy(src.begin(), src.end(), h.values.begin());
  return h;
}

inline Heatmap predict_heatmap(const SegNet& net, const Tensor& input) {
  if (input.dims().batch != 1)
    throw ConfigError("predict_heatmap expects a single encoded input");
  return heatmap_from_output(net.forward(input), 0);
}

// Gaussian init, std = gain / sqrt(fan_in), biases zero. First-layer weights
// are additionally divided by the input scale since inputs span [-127, 128];
// the category-channel weights then take the empirical std of the image-channel
// weights.
inline SegNet init_params(const ArchDescriptor& arch, std::uint64_t seed,
                          double gain = 1.0) {
  SegNet net(arch);
  std::mt19937_64 rng(seed);
  auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto& l = layers[li];
    const Dims& k = l.kernel.dims();
    const double fan_in = static_cast<double>(k.channels * k.height * k.width);
    double std_dev = gain / std::sqrt(fan_in);
    if (li == 0) std_dev /= kInputScale;
    std::normal_distribution<double> normal(0.0, std_dev);
    if (li != 0) {
      for (double& w : l.kernel.values()) w = normal(rng);
      continue;
    }
    // Image-channel slices first; then match their spread.
    const std::size_t taps = k.height * k.width;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t o = 0; o < k.batch; ++o)
      for (std::size_t c = 0; c < kImageChannels; ++c)
        for (std::size_t t = 0; t < taps; ++t) {
          const double w = normal(rng);
          l.kernel.storage()[(o * k.channels + c) * taps + t] = w;
          sum += w;
          sum_sq += w * w;
          ++count;
        }
    const double mean = sum / static_cast<double>(count);
    const double empirical =
        std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean));
    std::normal_distribution<double> cat_normal(0.0, empirical);
    for (std::size_t o = 0; o < k.batch; ++o)
      for (std::size_t c = kImageChannels; c < k.channels; ++c)
        for (std::size_t t = 0; t < taps; ++t)
          l.kernel.storage()[(o * k.channels + c) * taps + t] = cat_normal(rng);
  }
  return net;
}

}  // namespace iterseg
