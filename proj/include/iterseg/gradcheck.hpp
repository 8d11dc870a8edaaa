#pragma once

// Central finite-difference validation of analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iterseg/model.hpp"
#include "iterseg/nn.hpp"

namespace iterseg {

struct GradcheckOptions {
  // Central-difference step, scaled by max(1, |x|) per coordinate so it is
  // exactly `step` for every parameter of magnitude below one.
  double step = 1e-5;
  double tolerance = 1e-4;
  // Arrays larger than this are checked on a seeded random subset.
  std::size_t max_coords_per_array = 48;
  // Multiplies every analytic gradient; 1.01 is the injected-fault self-test.
  double corrupt_scale = 1.0;
};

struct ArrayReport {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  // Coordinates whose +/- step flipped a ReLU; finite differences are not a
  // valid oracle there, so another coordinate is drawn instead.
  std::size_t kink_skipped = 0;
  double max_rel_error = 0.0;
};

// Loss value plus the ReLU activation pattern that produced it. Smooth
// objectives leave the pattern empty.
struct Evaluation {
  double loss = 0.0;
  std::vector<bool> pattern;
};

struct GradcheckReport {
  std::vector<ArrayReport> arrays;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// `evaluate` re-computes the scalar objective with the current contents of
// the arrays in `values`; `analytic` holds the gradient for each array.
inline GradcheckReport gradcheck_arrays(std::span<const std::string> names,
                                        std::span<const std::span<double>> values,
                                        std::span<const std::span<const double>> analytic,
                                        const std::function<Evaluation()>& evaluate,
                                        std::uint64_t seed,
                                        const GradcheckOptions& opt = {}) {
  GradcheckReport report;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<bool> base = evaluate().pattern;
  for (std::size_t a = 0; a < values.size(); ++a) {
    auto w = values[a];
    auto g = analytic[a];
    ArrayReport ar{names[a], w.size(), 0, 0, 0.0};
    // Visit coordinates in a seeded random order until enough valid ones
    // have been checked.
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      if (ar.checked >= opt.max_coords_per_array) break;
      const double saved = w[i];
      const double h = opt.step * std::max(1.0, std::abs(saved));
      w[i] = saved + h;
      const Evaluation plus = evaluate();
      w[i] = saved - h;
      const Evaluation minus = evaluate();
      w[i] = saved;
      if (plus.pattern != base || minus.pattern != base) {
        ++ar.kink_skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * h);
      ar.max_rel_error =
          std::max(ar.max_rel_error, relative_error(g[i] * opt.corrupt_scale, numeric));
      ++ar.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, ar.max_rel_error);
    report.arrays.push_back(std::move(ar));
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

// Checks every parameter array and the input of a randomly initialised SegNet
// under the weighted BCE objective on a random two-sample batch.
inline GradcheckReport gradcheck_segnet(const ArchDescriptor& arch, std::uint64_t seed,
                                        const GradcheckOptions& opt = {}) {
  SegNet net = init_params(arch, seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  // Random biases so ReLUs are not all aligned at the origin.
  std::normal_distribution<double> small(0.0, 0.1);
  for (auto& l : net.layers())
    for (double& b : l.bias) b = small(rng);

  const std::size_t batch = 2;
  Tensor input(net.input_dims(batch));
  std::uniform_real_distribution<double> pixel(-127.0, 128.0);
  for (double& v : input.values()) v = pixel(rng);
  const std::size_t hm = arch.heatmap_size;
  Tensor target(Dims{batch, 1, hm, hm});
  std::bernoulli_distribution coin(0.5);
  for (double& v : target.values()) v = coin(rng) ? 1.0 : 0.0;
  const std::vector<double> weights{0.7, 1.3};

  auto evaluate = [&] {
    ForwardTape t;
    const Tensor out = net.forward(input, &t);
    Evaluation e{weighted_bce(out, target, weights).loss, {}};
    auto record = [&](const Tensor& act) {
      for (double v : act.values()) e.pattern.push_back(v > 0.0);
    };
    for (const Tensor& b : t.block_out) record(b);
    record(t.hidden);
    return e;
  };

  ForwardTape tape;
  const Tensor out = net.forward(input, &tape);
  const BceResult bce = weighted_bce(out, target, weights);
  const SegNetGrads grads = net.backward(tape, bce.grad, true);

  std::vector<std::string> names = net.parameter_names();
  names.push_back("input");
  std::vector<std::span<double>> values = net.parameter_arrays();
  values.emplace_back(input.values());
  std::vector<std::span<const double>> analytic = gradient_arrays(grads);
  analytic.emplace_back(grads.input.values());
  return gradcheck_arrays(names, values, analytic, evaluate, seed, opt);
}

}  // namespace iterseg
