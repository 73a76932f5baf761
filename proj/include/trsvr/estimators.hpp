#pragma once

// Gradient oracles for the two-loop driver: full, mini-batch, and
// variance-reduced estimates, plus deterministic batch sampling.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/errors.hpp"

namespace trsvr {

enum class EstimateKind { full, minibatch, variance_reduced };

struct GradientEstimate {
  Vector value;
  EstimateKind kind = EstimateKind::minibatch;
  std::vector<int> batch;  // empty for full estimates
  Vector point;            // where the estimate was evaluated
};

enum class SamplingMode { without_replacement, with_replacement };

struct BatchSampler {
  int population = 0;  // N
  int batch_size = 0;  // b
  SamplingMode mode = SamplingMode::without_replacement;
  RandomSource source;
};

// Batch at (k, s): a pure function of (seed, k, s). Indices are returned in
// ascending order so downstream reductions have a fixed order.
inline std::vector<int> sample_batch(const BatchSampler& sampler, int k, int s) {
  const int n = sampler.population;
  const int b = sampler.batch_size;
  if (n < 1) throw InputError("sample_batch: population must be >= 1");
  if (b < 1) throw InputError("sample_batch: batch size must be >= 1");
  if (sampler.mode == SamplingMode::without_replacement && b > n)
    throw InputError("sample_batch: batch size " + std::to_string(b) +
                     " exceeds population " + std::to_string(n) +
                     " in without_replacement mode");
  auto rng = sampler.source.stream(static_cast<std::uint64_t>(k),
                                   static_cast<std::uint64_t>(s), kBatchSalt);
  std::vector<int> batch;
  batch.reserve(b);
  if (sampler.mode == SamplingMode::without_replacement) {
    // Partial Fisher-Yates: the first b entries are a uniform b-subset.
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int j = 0; j < b; ++j) {
      const int swap_at =
          j + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - j)));
      std::swap(pool[j], pool[swap_at]);
    }
    batch.assign(pool.begin(), pool.begin() + b);
  } else {
    for (int j = 0; j < b; ++j)
      batch.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
  }
  std::sort(batch.begin(), batch.end());
  return batch;
}

// Full gradient wrapped as an estimate; the batch stays empty.
inline GradientEstimate full_gradient_estimate(const FiniteSumProblem& problem,
                                               const Vector& x) {
  GradientEstimate est;
  est.value = full_gradient(problem, x);
  est.kind = EstimateKind::full;
  est.point = x;
  return est;
}

// (1/b) sum over the batch of component gradients, in batch order.
inline GradientEstimate minibatch_gradient(const FiniteSumProblem& problem,
                                           const Vector& x,
                                           std::span<const int> batch) {
  check_dimension(problem, x, "minibatch_gradient");
  if (batch.empty()) throw InputError("minibatch_gradient: empty batch");
  Vector acc = Vector::Zero(problem.dimension);
  for (const int i : batch) {
    if (i < 0 || i >= problem.num_components)
      throw InputError("minibatch_gradient: index " + std::to_string(i) +
                       " outside [0, " +
                       std::to_string(problem.num_components) + ")");
    const Vector gi = problem.component_gradient(i, x);
    if (!gi.allFinite())
      throw NumericError("minibatch_gradient: non-finite entry from component " +
                         std::to_string(i));
    acc += gi;
  }
  GradientEstimate est;
  est.value = acc / static_cast<double>(batch.size());
  est.kind = EstimateKind::minibatch;
  est.batch.assign(batch.begin(), batch.end());
  est.point = x;
  return est;
}

// Variance-reduced estimate at the current point: the batch gradient at x
// corrected by the same batch's gradient at the anchor plus the cached full
// anchor gradient. At s = 0 the correction cancels exactly and the estimate
// equals the anchor gradient.
inline GradientEstimate variance_reduced_gradient(
    const FiniteSumProblem& problem, const IterateState& state,
    std::span<const int> batch) {
  if (!state.anchor_gradient_current())
    throw ContractError(
        "variance_reduced_gradient: cached anchor gradient is stale (anchor "
        "changed since refresh_anchor)");
  const GradientEstimate at_x = minibatch_gradient(problem, state.x, batch);
  const GradientEstimate at_anchor =
      minibatch_gradient(problem, state.anchor, batch);
  GradientEstimate est;
  est.value = (at_x.value - at_anchor.value) + state.anchor_full_gradient;
  est.kind = EstimateKind::variance_reduced;
  est.batch.assign(batch.begin(), batch.end());
  est.point = state.x;
  return est;
}

// Sample mean of ||vr_estimate - full_gradient(x_s)||^2 over `trials`
// independent batches. Used against the variance bound (L^2/b)||x_s - x_0||^2.
inline double estimator_variance(const FiniteSumProblem& problem,
                                 const Vector& x_s, const Vector& x_0, int b,
                                 int trials, const RandomSource& source,
                                 SamplingMode mode =
                                     SamplingMode::without_replacement) {
  if (trials < 1) throw InputError("estimator_variance: trials must be >= 1");
  IterateState state;
  state.refresh_anchor(problem, x_0);
  state.x = x_s;
  const Vector g_true = full_gradient(problem, x_s);
  // Derived seed keeps trial batches independent of any driver run that
  // shares the caller's seed.
  BatchSampler sampler{problem.num_components, b, mode,
                       RandomSource{mix64(source.seed ^ kTrialSalt)}};
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto batch = sample_batch(sampler, t, 0);
    const auto est = variance_reduced_gradient(problem, state, batch);
    acc += (est.value - g_true).squaredNorm();
  }
  return acc / trials;
}

}  // namespace trsvr
