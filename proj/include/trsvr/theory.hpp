#pragma once

// Convergence-theory calculator and empirical verifiers: constants of the
// analysis, the backward recursion for the per-step decrease coefficients,
// the average-gradient-norm bound, and runtime checks of the variance bound,
// the one-step and expected decrease inequalities, and the global bound.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/errors.hpp"
#include "trsvr/estimators.hpp"
#include "trsvr/tr_solver.hpp"

namespace trsvr {

// ---------------------------------------------------------------------------
// Constants

struct TheoryConstants {
  double grad_lipschitz = 0.0;        // Lipschitz constant of the mean gradient
  double hessian_bound = 0.0;         // uniform bound on the mean Hessian norm
  double hessian_approx_bound = 0.0;  // bound on the model Hessian norms (K_H)
  double component_lipschitz = 0.0;   // max per-component gradient Lipschitz (L)
  double sigma_g = 0.0;               // mini-batch variance bound; reported only
  double f_lower_bound = 0.0;
  double alpha = 0.0;
  double z = 1.0;  // free splitting parameter of the recursion
  int batch_size = 1;
  int inner_iters = 1;
  bool closed_form = false;  // constants certified rather than sampled

  double alpha_cap() const {
    return 1.0 / (2.0 * (grad_lipschitz + 2.0 * hessian_approx_bound));
  }
  bool alpha_hypothesis_ok() const {
    return alpha > 0.0 && alpha <= alpha_cap();
  }
};

// Constants for a problem: certified values when the problem carries them,
// otherwise sampled Lipschitz ratios with a 1.1 safety factor. The mini-batch
// variance bound is always sampled (it depends on the evaluation points).
// alpha, z, batch_size, and inner_iters stay at defaults for the caller.
inline TheoryConstants estimate_constants(const FiniteSumProblem& problem,
                                          const std::vector<Vector>& points) {
  if (points.size() < 2)
    throw InputError("estimate_constants: need at least 2 sample points");
  for (const auto& p : points) check_dimension(problem, p, "estimate_constants");

  TheoryConstants c;
  if (problem.constants) {
    c.grad_lipschitz = problem.constants->grad_lipschitz;
    c.hessian_bound = problem.constants->hessian_bound;
    c.component_lipschitz = problem.constants->component_lipschitz;
    c.f_lower_bound = problem.constants->f_lower_bound;
    c.closed_form = true;
  } else {
    double lip_full = 0.0;
    double lip_comp = 0.0;
    for (std::size_t a = 0; a < points.size(); ++a) {
      const Vector ga = full_gradient(problem, points[a]);
      for (std::size_t b = a + 1; b < points.size(); ++b) {
        const double dist = (points[a] - points[b]).norm();
        if (!(dist > 0.0)) continue;
        lip_full =
            std::max(lip_full,
                     (ga - full_gradient(problem, points[b])).norm() / dist);
        for (int i = 0; i < problem.num_components; ++i)
          lip_comp = std::max(
              lip_comp, (problem.component_gradient(i, points[a]) -
                         problem.component_gradient(i, points[b]))
                                .norm() /
                            dist);
      }
    }
    c.grad_lipschitz = 1.1 * lip_full;
    c.component_lipschitz = 1.1 * lip_comp;
    if (problem.has_hvp()) {
      double hnorm = 0.0;
      for (const auto& p : points) {
        auto op = [&problem, &p](const Vector& v) {
          return problem.hessian_vector_product(p, v);
        };
        hnorm = std::max(hnorm,
                         power_iteration_norm(op, problem.dimension, 100));
      }
      c.hessian_bound = 1.1 * hnorm;
    } else {
      c.hessian_bound = c.grad_lipschitz;
    }
    double fmin = evaluate_objective(problem, points.front());
    for (const auto& p : points)
      fmin = std::min(fmin, evaluate_objective(problem, p));
    c.f_lower_bound = std::min(0.0, fmin);  // sampled, not certified
    c.closed_form = false;
  }

  // Single-draw variance at the sample points bounds the b = 1 mini-batch
  // variance; larger batches only shrink it.
  double var = 0.0;
  for (const auto& p : points) {
    const Vector g = full_gradient(problem, p);
    double acc = 0.0;
    for (int i = 0; i < problem.num_components; ++i)
      acc += (problem.component_gradient(i, p) - g).squaredNorm();
    var = std::max(var, acc / problem.num_components);
  }
  c.sigma_g = std::sqrt(1.1 * var);

  c.hessian_approx_bound = c.hessian_bound;
  return c;
}

// ---------------------------------------------------------------------------
// Decrease-coefficient recursion

// Backward recursion from lambda[S] = 0:
//   lambda[s] = 1/2 (L_g + 2 K_H) alpha^2 L^2/b
//                + lambda[s+1] (1 + alpha z + (alpha^2 + alpha/z) L^2/b)
//   Lambda[s] = alpha/4 - lambda[s+1] (1 + 1/(alpha z)) alpha^2
// A positive minimum coefficient makes the average-gradient-norm bound
// meaningful; a nonpositive one is reported, not an error.
struct LyapunovSchedule {
  std::vector<double> lambda;  // size S+1, terminal entry 0
  std::vector<double> Lambda;  // size S
  double Lambda_min = 0.0;

  bool meaningful() const { return Lambda_min > 0.0; }
};

inline LyapunovSchedule lyapunov_schedule(const TheoryConstants& c) {
  if (!(c.alpha > 0.0)) throw InputError("lyapunov_schedule: alpha must be > 0");
  if (!(c.z > 0.0)) throw InputError("lyapunov_schedule: z must be > 0");
  if (c.inner_iters < 1)
    throw InputError("lyapunov_schedule: inner_iters must be >= 1");
  if (c.batch_size < 1)
    throw InputError("lyapunov_schedule: batch_size must be >= 1");

  const int s_max = c.inner_iters;
  const double variance_rate =
      c.component_lipschitz * c.component_lipschitz / c.batch_size;  // L^2/b
  const double inject = 0.5 * (c.grad_lipschitz + 2.0 * c.hessian_approx_bound) *
                        c.alpha * c.alpha * variance_rate;
  const double growth =
      1.0 + c.alpha * c.z + (c.alpha * c.alpha + c.alpha / c.z) * variance_rate;

  LyapunovSchedule sched;
  sched.lambda.assign(s_max + 1, 0.0);
  sched.Lambda.assign(s_max, 0.0);
  for (int s = s_max - 1; s >= 0; --s)
    sched.lambda[s] = inject + sched.lambda[s + 1] * growth;
  for (int s = 0; s < s_max; ++s)
    sched.Lambda[s] = 0.25 * c.alpha - sched.lambda[s + 1] *
                                           (1.0 + 1.0 / (c.alpha * c.z)) *
                                           c.alpha * c.alpha;
  sched.Lambda_min =
      *std::min_element(sched.Lambda.begin(), sched.Lambda.end());
  return sched;
}

// Right-hand side of the global bound on the averaged squared gradient norm.
inline double convergence_bound(double f0, double f_inf, int outer_index_max,
                                int inner_iters, double lambda_min) {
  if (!(lambda_min > 0.0))
    throw InputError("convergence_bound: bound invalid, Lambda_min <= 0");
  if (outer_index_max < 0)
    throw InputError("convergence_bound: outer index must be >= 0");
  if (inner_iters < 1)
    throw InputError("convergence_bound: inner_iters must be >= 1");
  if (f0 < f_inf)
    throw InputError("convergence_bound: f0 below the lower bound");
  return (f0 - f_inf) / (static_cast<double>(outer_index_max + 1) *
                         inner_iters * lambda_min);
}

// The splitting parameter z is free; the bound holds for every z > 0, so the
// grid search reports the value maximizing the minimum decrease coefficient.
struct ZSearchResult {
  double z = 1.0;
  LyapunovSchedule schedule;
};

inline ZSearchResult search_z(TheoryConstants c, double z_lo = 1e-2,
                              double z_hi = 1e2, int points_per_decade = 10) {
  if (!(z_lo > 0.0) || !(z_hi >= z_lo))
    throw InputError("search_z: need 0 < z_lo <= z_hi");
  const double step = std::pow(10.0, 1.0 / points_per_decade);
  ZSearchResult best;
  bool first = true;
  for (double z = z_lo; z <= z_hi * (1.0 + 1e-12); z *= step) {
    c.z = z;
    LyapunovSchedule sched = lyapunov_schedule(c);
    if (first || sched.Lambda_min > best.schedule.Lambda_min) {
      best.z = z;
      best.schedule = std::move(sched);
      first = false;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Reports

enum class CheckStatus { pass, fail, skip };

struct CheckLine {
  std::string name;
  CheckStatus status = CheckStatus::pass;
  double lhs = kNaN;
  double rhs = kNaN;
  std::string note;
};

struct Report {
  std::vector<CheckLine> lines;

  bool all_ok() const {
    for (const auto& l : lines)
      if (l.status == CheckStatus::fail) return false;
    return true;
  }
  int failures() const {
    int n = 0;
    for (const auto& l : lines) n += l.status == CheckStatus::fail;
    return n;
  }
  void add(std::string name, bool pass, double lhs, double rhs,
           std::string note = "") {
    lines.push_back({std::move(name),
                     pass ? CheckStatus::pass : CheckStatus::fail, lhs, rhs,
                     std::move(note)});
  }
  void skip(std::string name, std::string note) {
    lines.push_back({std::move(name), CheckStatus::skip, kNaN, kNaN,
                     std::move(note)});
  }
};

// ---------------------------------------------------------------------------
// Subset enumeration

inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    // Desk-scale guard; callers gate on the result anyway.
    if (result > (1ull << 62) / static_cast<std::uint64_t>(n)) return ~0ull;
    result = result * static_cast<std::uint64_t>(n - k + i) /
             static_cast<std::uint64_t>(i);
  }
  return result;
}

// Visits every size-b subset of {0..n-1} in lexicographic order.
template <typename Fn>
inline void for_each_combination(int n, int b, Fn&& fn) {
  if (b < 1 || b > n) throw InputError("for_each_combination: need 1 <= b <= n");
  std::vector<int> idx(b);
  for (int i = 0; i < b; ++i) idx[i] = i;
  for (;;) {
    fn(static_cast<const std::vector<int>&>(idx));
    int i = b - 1;
    while (i >= 0 && idx[i] == n - b + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < b; ++j) idx[j] = idx[j - 1] + 1;
  }
}

// ---------------------------------------------------------------------------
// Variance-bound verification

enum class VarianceCheckMode { exact_enumeration, monte_carlo };

inline constexpr std::uint64_t kEnumerationLimit = 1000000;

// Checks E||vr_estimate - g(x_s)||^2 <= (L^2/b)||x_s - x_0||^2 per pair.
// Exact mode enumerates every batch and is authoritative; Monte-Carlo mode
// allows 3 standard errors of slack.
inline Report verify_variance_bound(
    const FiniteSumProblem& problem, const TheoryConstants& c,
    const std::vector<std::pair<Vector, Vector>>& pairs,  // (x_s, x_0)
    VarianceCheckMode mode, int trials = 100000,
    const RandomSource& source = RandomSource{0}) {
  const int n = problem.num_components;
  const int b = c.batch_size;
  if (b < 1 || b > n)
    throw InputError("verify_variance_bound: batch size out of range");
  if (mode == VarianceCheckMode::exact_enumeration &&
      binomial(n, b) > kEnumerationLimit)
    throw InputError(
        "verify_variance_bound: C(N, b) exceeds the enumeration limit; use "
        "monte_carlo mode");
  const double rate = c.component_lipschitz * c.component_lipschitz / b;

  Report report;
  int pair_id = 0;
  for (const auto& [x_s, x_0] : pairs) {
    const std::string name = "variance.pair" + std::to_string(pair_id++);
    const double rhs = rate * (x_s - x_0).squaredNorm();
    if (mode == VarianceCheckMode::exact_enumeration) {
      IterateState state;
      state.refresh_anchor(problem, x_0);
      state.x = x_s;
      const Vector g_true = full_gradient(problem, x_s);
      double acc = 0.0;
      std::uint64_t count = 0;
      for_each_combination(n, b, [&](const std::vector<int>& batch) {
        const auto est = variance_reduced_gradient(problem, state, batch);
        acc += (est.value - g_true).squaredNorm();
        ++count;
      });
      const double lhs = acc / static_cast<double>(count);
      report.add(name, lhs <= rhs + 1e-12 * std::max(1.0, rhs), lhs, rhs);
    } else {
      if (trials < 2)
        throw InputError("verify_variance_bound: monte_carlo needs trials >= 2");
      IterateState state;
      state.refresh_anchor(problem, x_0);
      state.x = x_s;
      const Vector g_true = full_gradient(problem, x_s);
      BatchSampler sampler{n, b, SamplingMode::without_replacement,
                           RandomSource{mix64(source.seed ^ kTrialSalt)}};
      double mean = 0.0, m2 = 0.0;
      for (int t = 0; t < trials; ++t) {
        const auto batch = sample_batch(sampler, t, pair_id);
        const auto est = variance_reduced_gradient(problem, state, batch);
        const double v = (est.value - g_true).squaredNorm();
        const double delta = v - mean;
        mean += delta / (t + 1);
        m2 += delta * (v - mean);
      }
      const double se = std::sqrt(m2 / (trials - 1.0) / trials);
      report.add(name, mean <= rhs + 3.0 * se + 1e-12, mean, rhs,
                 "se=" + format_g17(se));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Decrease-lemma verification

struct DecreaseCheckOptions {
  int replay_trials = 1000;
  int max_states = 10;
  std::uint64_t replay_seed = 12345;
  double pathwise_slack = 1e-9;
};

// Pathwise one-step inequality at every trace row, plus a Monte-Carlo check
// of the conditional expected-decrease inequality replayed from recorded
// state snapshots. Requires a proportional-policy trace with true-gradient
// diagnostics at every step.
inline Report verify_decrease_lemmas(
    const Trace& trace, const FiniteSumProblem& problem,
    const TheoryConstants& c, const DecreaseCheckOptions& options = {}) {
  if (trace.config.radius_mode != RadiusMode::proportional)
    throw InputError(
        "verify_decrease_lemmas: trace was produced with the clipped radius "
        "policy; the analysis assumes the proportional policy — rerun with "
        "optimizer.radius_policy = proportional");
  if (trace.config.diag_every != 1)
    throw InputError(
        "verify_decrease_lemmas: trace lacks per-step true-gradient "
        "diagnostics (optimizer.diag_every must be 1)");
  if (trace.config.hessian.mode == HessianMode::lbfgs)
    throw InputError(
        "verify_decrease_lemmas: history-dependent lbfgs models cannot be "
        "replayed; use exact_hvp, diagonal, or identity_scaled");

  Report report;

  // One-step inequality, recomputed from the recorded quantities.
  for (const auto& rec : trace.records) {
    const double khat = std::isnan(rec.hessian_bound) ? 0.0 : rec.hessian_bound;
    const double noise = std::isnan(rec.noise_norm) ? 0.0 : rec.noise_norm;
    const double rhs = -rec.vr_grad_norm * rec.radius +
                       0.5 * khat * rec.radius * rec.radius +
                       noise * rec.radius +
                       0.5 * (c.grad_lipschitz + khat) * rec.radius * rec.radius;
    report.add("one_step.k" + std::to_string(rec.k) + "s" + std::to_string(rec.s),
               rec.actual_decrease <= rhs + options.pathwise_slack,
               rec.actual_decrease, rhs);
  }

  // Expected decrease needs the step-size hypothesis.
  if (!c.alpha_hypothesis_ok()) {
    report.skip("expected_decrease.hypothesis",
                "alpha=" + format_g17(c.alpha) + "_exceeds_cap=" +
                    format_g17(c.alpha_cap()));
    return report;
  }
  if (trace.snapshots.empty()) {
    report.skip("expected_decrease.states", "no_snapshots_recorded");
    return report;
  }

  const int n_states =
      std::min<int>(options.max_states, static_cast<int>(trace.snapshots.size()));
  const double coeff =
      0.5 * (c.grad_lipschitz + 2.0 * c.hessian_approx_bound) * c.alpha * c.alpha;
  for (int si = 0; si < n_states; ++si) {
    const std::size_t pick =
        trace.snapshots.size() == 1
            ? 0
            : si * (trace.snapshots.size() - 1) / std::max(1, n_states - 1);
    const auto& snap = trace.snapshots[pick];
    IterateState state;
    state.outer = snap.k;
    state.inner = snap.s;
    state.x = snap.x;
    state.anchor = snap.anchor;
    state.anchor_full_gradient = snap.anchor_full_gradient;
    state.anchor_stamp = vector_fingerprint(state.anchor);

    const double f_here = evaluate_objective(problem, state.x);
    const Vector g_here = full_gradient(problem, state.x);
    const double g_sq = g_here.squaredNorm();

    BatchSampler sampler{problem.num_components, trace.config.batch_size,
                         trace.config.sampling,
                         RandomSource{mix64(options.replay_seed ^ kReplaySalt)}};
    double mean_lhs = 0.0, mean_rhs = 0.0;
    double mean_gap = 0.0, m2_gap = 0.0;
    const int trials = std::max(2, options.replay_trials);
    for (int t = 0; t < trials; ++t) {
      const auto batch = sample_batch(sampler, si, t);
      const auto estimate = variance_reduced_gradient(problem, state, batch);
      state.radius = c.alpha * estimate.value.norm();
      double f_next = f_here;
      if (state.radius > 0.0) {
        const auto model = build_model(problem, state, estimate,
                                       trace.config.hessian, nullptr);
        Step step =
            trace.config.subproblem == SubproblemSolver::steihaug
                ? steihaug_cg(model, trace.config.cg_tol,
                              trace.config.cg_max_iter > 0
                                  ? trace.config.cg_max_iter
                                  : 2 * problem.dimension)
                : cauchy_step(model);
        if (!check_cauchy_decrease(model, step)) step = cauchy_step(model);
        f_next = evaluate_objective(problem, state.x + step.direction);
      }
      const double lhs = f_next - f_here;
      const double rhs = -0.25 * c.alpha * g_sq +
                         coeff * (g_here - estimate.value).squaredNorm();
      mean_lhs += (lhs - mean_lhs) / (t + 1);
      mean_rhs += (rhs - mean_rhs) / (t + 1);
      const double gap = lhs - rhs;
      const double delta = gap - mean_gap;
      mean_gap += delta / (t + 1);
      m2_gap += delta * (gap - mean_gap);
    }
    const double se = std::sqrt(m2_gap / (trials - 1.0) / trials);
    report.add("expected_decrease.k" + std::to_string(snap.k) + "s" +
                   std::to_string(snap.s),
               mean_gap <= 3.0 * se + 1e-12, mean_lhs,
               mean_rhs + 3.0 * se, "se=" + format_g17(se));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Global-bound verification

// Across-seed average of the per-trace mean squared true gradient norm,
// compared against the bound with 3 relative standard errors of slack.
inline Report verify_theorem_bound(const std::vector<Trace>& traces,
                                   const TheoryConstants& c,
                                   const LyapunovSchedule& schedule) {
  Report report;
  if (traces.empty())
    throw InputError("verify_theorem_bound: need at least one trace");
  const int outer = traces.front().config.outer_iters;
  const int inner = traces.front().config.inner_iters;
  const std::size_t expected_rows =
      static_cast<std::size_t>(outer) * static_cast<std::size_t>(inner);

  if (!schedule.meaningful()) {
    report.skip("theorem.bound.K" + std::to_string(outer - 1),
                "bound_vacuous_Lambda_min=" +
                    format_g17(schedule.Lambda_min));
    return report;
  }

  const double f0 = traces.front().records.empty()
                        ? kNaN
                        : traces.front().records.front().f;
  std::vector<double> per_seed;
  per_seed.reserve(traces.size());
  for (const auto& trace : traces) {
    if (trace.config.outer_iters != outer || trace.config.inner_iters != inner)
      throw InputError("verify_theorem_bound: traces disagree on (K, S)");
    if (trace.records.size() != expected_rows)
      throw InputError(
          "verify_theorem_bound: trace stopped early; the bound averages all "
          "(K+1)*S iterations");
    if (trace.records.front().f != f0)
      throw InputError("verify_theorem_bound: traces start from different points");
    double acc = 0.0;
    for (const auto& rec : trace.records) {
      if (std::isnan(rec.grad_norm))
        throw InputError(
            "verify_theorem_bound: trace lacks per-step true gradient norms "
            "(optimizer.diag_every must be 1)");
      acc += rec.grad_norm * rec.grad_norm;
    }
    per_seed.push_back(acc / static_cast<double>(expected_rows));
  }

  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < per_seed.size(); ++i) {
    const double delta = per_seed[i] - mean;
    mean += delta / (i + 1.0);
    m2 += delta * (per_seed[i] - mean);
  }
  const double se = per_seed.size() > 1
                        ? std::sqrt(m2 / (per_seed.size() - 1.0) /
                                    per_seed.size())
                        : 0.0;
  const double rel_se = mean > 0.0 ? se / mean : 0.0;
  const double bound =
      convergence_bound(f0, c.f_lower_bound, outer - 1, inner,
                        schedule.Lambda_min);
  const double rhs = bound * (1.0 + 3.0 * rel_se);
  report.add("theorem.bound.K" + std::to_string(outer - 1), mean <= rhs, mean,
             rhs, "bound=" + format_g17(bound));
  return report;
}

}  // namespace trsvr
