#pragma once

// Staged training over a growing pool of cached self-predictions, and
// multi-step refinement at test time.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"
#include "iterseg/model.hpp"
#include "iterseg/nn.hpp"
#include "iterseg/synth.hpp"
#include "iterseg/util.hpp"

namespace iterseg {

inline constexpr double kInitialHeat = 0.5;
inline constexpr std::size_t kDefaultTestIterations = 3;

struct StageSchedule {
  std::vector<std::size_t> iterations_per_stage{3000, 3000, 2000};
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;

  std::size_t num_stages() const { return iterations_per_stage.size(); }

  void validate() const {
    if (iterations_per_stage.empty()) throw ConfigError("at least one stage is required");
    for (std::size_t n : iterations_per_stage)
      if (n == 0) throw ConfigError("every stage needs a positive iteration count");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  }
};

// Heatmaps by (sample, stage). Stage 0 is the constant 1/2 map; each later
// stage is appended whole, once, and never rewritten.
class PredictionStore {
 public:
  PredictionStore() = default;
  PredictionStore(std::size_t num_samples, std::size_t heatmap_size)
      : num_samples_(num_samples), heatmap_size_(heatmap_size) {
    stages_.emplace_back(num_samples, constant_heatmap(heatmap_size, kInitialHeat));
  }

  std::size_t num_samples() const { return num_samples_; }
  std::size_t num_stages() const { return stages_.size(); }
  std::size_t size() const { return num_samples_ * stages_.size(); }

  bool has(std::size_t sample, std::size_t stage) const {
    return sample < num_samples_ && stage < stages_.size();
  }

  const Heatmap& at(std::size_t sample, std::size_t stage) const {
    if (!has(sample, stage))
      throw ConsistencyError("no cached prediction for sample " + std::to_string(sample) +
                             " at stage " + std::to_string(stage));
    return stages_[stage][sample];
  }

  // Appends stage num_stages(); one heatmap per sample, values in [0, 1].
  void append_stage(std::vector<Heatmap> maps) {
    if (maps.size() != num_samples_)
      throw ConsistencyError("stage " + std::to_string(stages_.size()) + " has " +
                             std::to_string(maps.size()) + " heatmaps for " +
                             std::to_string(num_samples_) + " samples");
    for (const auto& m : maps) {
      if (m.width != heatmap_size_ || m.height != heatmap_size_)
        throw ConsistencyError("cached heatmap has the wrong size");
      for (double v : m.values)
        if (!(v >= 0.0 && v <= 1.0))
          throw ConsistencyError("cached heatmap value outside [0, 1]");
    }
    stages_.push_back(std::move(maps));
  }

 private:
  std::size_t num_samples_ = 0;
  std::size_t heatmap_size_ = 0;
  std::vector<std::vector<Heatmap>> stages_;
};

struct PoolEntry {
  std::size_t sample = 0;        // position in the training sample list
  std::size_t source_stage = 0;  // i < t
  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

// One entry per (sample, i) with 0 <= i < t.
inline std::vector<PoolEntry> build_stage_training_set(const PredictionStore& store,
                                                       std::size_t num_samples,
                                                       std::size_t stage) {
  if (stage < 1) throw ConfigError("training stages start at 1");
  std::vector<PoolEntry> pool;
  pool.reserve(num_samples * stage);
  for (std::size_t i = 0; i < stage; ++i)
    for (std::size_t s = 0; s < num_samples; ++s) {
      if (!store.has(s, i))
        throw ConsistencyError("stage " + std::to_string(stage) +
                               " pool needs cached prediction (sample " +
                               std::to_string(s) + ", stage " + std::to_string(i) + ")");
      pool.push_back({s, i});
    }
  return pool;
}

struct LossRecord {
  std::size_t step = 0;  // global step, 1-based
  std::size_t stage = 0;
  double loss = 0.0;     // per-pixel mean weighted NLL of the minibatch
};

struct TrainResult {
  SegNet net;
  PredictionStore store;
  std::vector<LossRecord> trace;
};

struct TrainCallbacks {
  // Called after stage t's predictions are cached.
  std::function<void(std::size_t stage, const SegNet&, const PredictionStore&)> on_stage_end;
  std::function<void(const LossRecord&)> on_step;
};

namespace detail {

inline Tensor mask_target(std::span<const PatchSample* const> items, std::size_t hm) {
  Tensor t(Dims{items.size(), 1, hm, hm});
  for (std::size_t n = 0; n < items.size(); ++n) {
    auto plane = t.plane(n, 0);
    const auto& m = items[n]->gt_mask.values;
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = m[i] ? 1.0 : 0.0;
  }
  return t;
}

}  // namespace detail

// One refinement step for many (patch, previous heatmap, category) triples,
// evaluated in chunks. Each item's result is independent of the chunking.
inline std::vector<Heatmap> refine_step(const SegNet& net,
                                        std::span<const RgbImage* const> patches,
                                        std::span<const Heatmap* const> previous,
                                        std::span<const std::size_t> categories,
                                        std::size_t chunk = 32) {
  const ArchDescriptor& arch = net.arch();
  std::vector<Heatmap> out;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += chunk) {
    const std::size_t n = std::min(chunk, patches.size() - start);
    Tensor input(net.input_dims(n));
    for (std::size_t k = 0; k < n; ++k)
      encode_input_into(input, k, arch, *patches[start + k], *previous[start + k],
                        categories[start + k]);
    const Tensor y = net.forward(input);
    for (std::size_t k = 0; k < n; ++k) out.push_back(heatmap_from_output(y, k));
  }
  return out;
}

// For t = 1..N: train on the pool of (x, p^(i)_x), i < t, starting from the
// current parameters; then cache p^(t)_x = f(x, p^(t-1)_x) for every sample.
inline TrainResult train_stages(const std::vector<PatchSample>& samples, SegNet net,
                                const StageSchedule& schedule, std::uint64_t seed,
                                const TrainCallbacks& callbacks = {}) {
  schedule.validate();
  if (samples.empty()) throw DataError("training set is empty");
  const ArchDescriptor& arch = net.arch();
  const std::size_t hm = arch.heatmap_size;
  for (const auto& s : samples)
    if (s.category >= arch.num_categories)
      throw DataError("sample " + std::to_string(s.sample_id) + " has category " +
                      std::to_string(s.category) + " outside the model's range");

  TrainResult result;
  result.store = PredictionStore(samples.size(), hm);
  std::mt19937_64 rng(splitmix64(seed));
  OptimizerState opt(net.parameter_sizes(), schedule.learning_rate, schedule.momentum);
  const std::size_t batch = schedule.batch_size;
  const double norm = 1.0 / static_cast<double>(batch * hm * hm);
  std::size_t global_step = 0;

  for (std::size_t t = 1; t <= schedule.num_stages(); ++t) {
    const auto pool = build_stage_training_set(result.store, samples.size(), t);
    std::vector<std::vector<std::size_t>> by_category(arch.num_categories);
    for (std::size_t e = 0; e < pool.size(); ++e)
      by_category[samples[pool[e].sample].category].push_back(e);
    std::vector<std::size_t> categories;
    for (std::size_t c = 0; c < by_category.size(); ++c)
      if (!by_category[c].empty()) categories.push_back(c);
    std::uniform_int_distribution<std::size_t> pick_category(0, categories.size() - 1);

    for (std::size_t it = 0; it < schedule.iterations_per_stage[t - 1]; ++it) {
      ++global_step;
      std::vector<const PatchSample*> items(batch);
      Tensor input(net.input_dims(batch));
      std::vector<double> weights(batch);
      for (std::size_t k = 0; k < batch; ++k) {
        const auto& members = by_category[categories[pick_category(rng)]];
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        const PoolEntry& entry = pool[members[pick(rng)]];
        const PatchSample& s = samples[entry.sample];
        items[k] = &s;
        weights[k] = s.area_weight * norm;
        encode_input_into(input, k, arch, s.patch,
                          result.store.at(entry.sample, entry.source_stage), s.category);
      }
      const Tensor target = detail::mask_target(items, hm);
      ForwardTape tape;
      const Tensor pred = net.forward(input, &tape);
      const BceResult bce = weighted_bce(pred, target, weights);
      if (!std::isfinite(bce.loss))
        throw DivergenceError("loss is not finite at stage " + std::to_string(t) +
                              ", iteration " + std::to_string(it + 1));
      const SegNetGrads grads = net.backward(tape, bce.grad);
      sgd_step(net.parameter_arrays(), gradient_arrays(grads), opt);
      LossRecord rec{global_step, t, bce.loss};
      result.trace.push_back(rec);
      if (callbacks.on_step) callbacks.on_step(rec);
    }

    std::vector<const RgbImage*> patches;
    std::vector<const Heatmap*> prev;
    std::vector<std::size_t> cats;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      patches.push_back(&samples[s].patch);
      prev.push_back(&result.store.at(s, t - 1));
      cats.push_back(samples[s].category);
    }
    result.store.append_stage(refine_step(net, patches, prev, cats));
    if (callbacks.on_stage_end) callbacks.on_stage_end(t, net, result.store);
  }
  result.net = std::move(net);
  return result;
}

struct InferenceResult {
  Heatmap final_heatmap;
  std::vector<Heatmap> trajectory;  // y^(0) .. y^(M)
};

// y^(0) = 1/2; y^(t) = f(x, y^(t-1)) for t = 1..M.
inline InferenceResult infer(const SegNet& net, const RgbImage& patch, std::size_t category,
                             std::size_t iterations = kDefaultTestIterations) {
  InferenceResult r;
  r.trajectory.push_back(constant_heatmap(net.arch().heatmap_size, kInitialHeat));
  for (std::size_t t = 1; t <= iterations; ++t)
    r.trajectory.push_back(predict_heatmap(
        net, encode_input(net.arch(), patch, r.trajectory.back(), category)));
  r.final_heatmap = r.trajectory.back();
  return r;
}

// Batched form of infer: trajectories[k] belongs to patches[k].
inline std::vector<std::vector<Heatmap>> infer_many(const SegNet& net,
                                                    std::span<const RgbImage* const> patches,
                                                    std::span<const std::size_t> categories,
                                                    std::size_t iterations) {
  std::vector<std::vector<Heatmap>> traj(
      patches.size(),
      std::vector<Heatmap>{constant_heatmap(net.arch().heatmap_size, kInitialHeat)});
  for (std::size_t t = 1; t <= iterations; ++t) {
    std::vector<const Heatmap*> prev;
    for (const auto& tr : traj) prev.push_back(&tr.back());
    auto next = refine_step(net, patches, prev, categories);
    for (std::size_t k = 0; k < traj.size(); ++k) traj[k].push_back(std::move(next[k]));
  }
  return traj;
}

// Mean |y^(t) - y^(t-1)| over pixels for t = 1..M.
inline std::vector<double> convergence_trace(std::span<const Heatmap> trajectory) {
  std::vector<double> trace;
  for (std::size_t t = 1; t < trajectory.size(); ++t) {
    const auto& a = trajectory[t].values;
    const auto& b = trajectory[t - 1].values;
    if (a.size() != b.size()) throw ConfigError("trajectory heatmaps differ in size");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
    trace.push_back(a.empty() ? 0.0 : sum / static_cast<double>(a.size()));
  }
  return trace;
}

}  // namespace iterseg
