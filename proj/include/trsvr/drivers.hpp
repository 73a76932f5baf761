#pragma once

// Optimization drivers: the variance-reduced trust-region two-loop method,
// SVRG and SGD baselines with fixed steps, and the full-batch trust-region
// control. All drivers emit a uniform per-iteration trace.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/errors.hpp"
#include "trsvr/estimators.hpp"
#include "trsvr/tr_solver.hpp"

namespace trsvr {

enum class OptimizerKind { trsvr, sgd, svrg, tr_deterministic };
enum class SubproblemSolver { cauchy, steihaug };

struct StopRule {
  double grad_tol = 0.0;      // 0 disables; checked where the true gradient is available
  long long eval_budget = 0;  // 0 disables; counts component-gradient evaluations
};

struct RunConfig {
  OptimizerKind optimizer = OptimizerKind::trsvr;
  int batch_size = 1;   // b
  int inner_iters = 1;  // S
  int outer_iters = 1;  // outer loops executed (k = 0 .. outer_iters-1)
  double alpha = 0.1;
  double eta1 = 10.0;
  double eta2 = 0.1;
  RadiusMode radius_mode = RadiusMode::proportional;
  HessianOptions hessian;
  SubproblemSolver subproblem = SubproblemSolver::steihaug;
  double cg_tol = 1e-8;
  int cg_max_iter = 0;  // 0 resolves to 2*dimension
  SamplingMode sampling = SamplingMode::without_replacement;
  std::uint64_t seed = 0;
  double delta0 = 1.0;
  bool delta0_first_step = false;  // use delta0 at (k,s) = (0,0) instead of the policy
  StopRule stop;
  int diag_every = 1;     // true-gradient diagnostics cadence; 0 disables
  int snapshot_every = 0; // state snapshots for replay verification; 0 disables
  bool strict = false;    // abort when a per-iteration inequality check fails
  bool warn_hypothesis = true;
  Vector x0;  // empty resolves to the zero vector
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct IterationRecord {
  int k = 0;
  int s = 0;
  double f = kNaN;              // f(x_{k,s}) before the step
  double grad_norm = kNaN;      // true gradient norm (diagnostic cadence)
  double vr_grad_norm = kNaN;   // norm of the estimate driving the step
  double radius = kNaN;
  double step_norm = kNaN;
  double model_decrease = kNaN;
  double actual_decrease = kNaN;  // f(x_{k,s+1}) - f(x_{k,s})
  long long evals = 0;            // cumulative component-gradient evaluations
  double noise_norm = kNaN;       // ||g - estimate|| (diagnostic cadence)
  double hessian_bound = kNaN;    // certified model norm bound
  double rho = kNaN;              // actual/model decrease; logged, never gating
  bool cauchy_ok = true;          // first subproblem solution passed the certificate
  bool one_step_ok = true;        // pathwise one-step inequality (diagnostic cadence)
};

struct StateSnapshot {
  int k = 0;
  int s = 0;
  Vector x;
  Vector anchor;
  Vector anchor_full_gradient;
};

struct Trace {
  RunConfig config;  // as executed, defaults resolved
  std::vector<IterationRecord> records;
  std::vector<StateSnapshot> snapshots;
  Vector final_x;
  double final_f = kNaN;
  double final_grad_norm = kNaN;
  long long total_evals = 0;
  double wall_seconds = 0.0;
  std::string stop_reason;  // completed | grad_tol | eval_budget
};

namespace detail {

inline void validate_run_config(const FiniteSumProblem& problem,
                                const RunConfig& c) {
  const int n = problem.num_components;
  if (c.batch_size < 1 || c.batch_size > n)
    throw InputError("optimizer.batch_size must be in [1, " +
                     std::to_string(n) + "], got " +
                     std::to_string(c.batch_size));
  if (c.inner_iters < 1) throw InputError("optimizer.inner_iters must be >= 1");
  if (c.outer_iters < 1) throw InputError("optimizer.outer_iters must be >= 1");
  if (!(c.alpha > 0.0)) throw InputError("optimizer.alpha must be positive");
  if (!(c.cg_tol > 0.0)) throw InputError("optimizer.cg_tol must be positive");
  if (c.cg_max_iter < 0) throw InputError("optimizer.cg_max_iter must be >= 0");
  if (c.diag_every < 0) throw InputError("optimizer.diag_every must be >= 0");
  if (c.snapshot_every < 0)
    throw InputError("optimizer.snapshot_every must be >= 0");
  if (c.x0.size() != 0 && c.x0.size() != problem.dimension)
    throw InputError("optimizer.x0 has dimension " +
                     std::to_string(c.x0.size()) + ", problem expects " +
                     std::to_string(problem.dimension));
  if (c.radius_mode == RadiusMode::clipped &&
      (!(c.eta1 > c.eta2) || !(c.eta2 > 0.0)))
    throw InputError("optimizer.eta1/eta2: clipped mode requires eta1 > eta2 > 0");
}

// Step-size hypothesis of the expected-decrease analysis; advisory only.
inline void warn_alpha_hypothesis(const FiniteSumProblem& problem,
                                  const RunConfig& c) {
  if (!c.warn_hypothesis || !problem.constants) return;
  double approx_bound = 0.0;
  switch (c.hessian.mode) {
    case HessianMode::identity_scaled:
      approx_bound = std::abs(c.hessian.identity_scale);
      break;
    case HessianMode::exact_hvp:
    case HessianMode::diagonal:
      approx_bound = problem.constants->hessian_bound;
      break;
    case HessianMode::lbfgs:
      if (c.hessian.norm_cap > 0.0)
        approx_bound = c.hessian.norm_cap;
      else
        return;  // no a-priori bound available
      break;
  }
  const double cap =
      1.0 / (2.0 * (problem.constants->grad_lipschitz + 2.0 * approx_bound));
  if (c.alpha > cap)
    std::cerr << "warning: alpha = " << format_g17(c.alpha)
              << " exceeds the expected-decrease step-size cap "
              << format_g17(cap)
              << "; theory checks for this run may be vacuous\n";
}

inline RunConfig resolve_defaults(const FiniteSumProblem& problem,
                                  RunConfig c) {
  if (c.x0.size() == 0) c.x0 = Vector::Zero(problem.dimension);
  if (c.cg_max_iter == 0) c.cg_max_iter = 2 * problem.dimension;
  return c;
}

// Shared body of the anchored two-loop methods. `trust_region` selects the
// subproblem step; otherwise the update is the fixed-step move along the
// variance-reduced estimate.
inline Trace run_two_loop(const FiniteSumProblem& problem, RunConfig config,
                          bool trust_region) {
  validate_run_config(problem, config);
  config = resolve_defaults(problem, config);
  if (trust_region) warn_alpha_hypothesis(problem, config);
  const auto t_start = std::chrono::steady_clock::now();

  const int n = problem.num_components;
  const int d = problem.dimension;
  const RadiusPolicy policy =
      config.radius_mode == RadiusMode::proportional
          ? RadiusPolicy::proportional(config.alpha)
          : RadiusPolicy::clipped(config.alpha, config.eta1, config.eta2);
  const BatchSampler sampler{n, config.batch_size, config.sampling,
                             RandomSource{config.seed}};

  Trace trace;
  trace.config = config;
  IterateState state;
  state.x = config.x0;
  LbfgsHistory history(config.hessian.lbfgs_memory);
  Vector prev_estimate;
  Vector prev_step;
  bool have_curvature_pair = false;

  long long evals = 0;
  long long step_index = 0;
  double f_current = evaluate_objective(problem, state.x);
  std::string stop_reason = "completed";
  bool stopped = false;

  for (int k = 0; k < config.outer_iters && !stopped; ++k) {
    state.outer = k;
    state.refresh_anchor(problem, state.x);
    evals += n;
    if (config.stop.grad_tol > 0.0 &&
        state.anchor_full_gradient.norm() <= config.stop.grad_tol) {
      stop_reason = "grad_tol";
      break;
    }

    for (int s = 0; s < config.inner_iters; ++s) {
      state.inner = s;
      const auto batch = sample_batch(sampler, k, s);
      const auto estimate = variance_reduced_gradient(problem, state, batch);
      evals += 2LL * config.batch_size;

      if (trust_region && config.hessian.mode == HessianMode::lbfgs &&
          have_curvature_pair)
        history.push(prev_step, estimate.value - prev_estimate);

      IterationRecord rec;
      rec.k = k;
      rec.s = s;
      rec.f = f_current;
      const double est_norm = estimate.value.norm();
      rec.vr_grad_norm = est_norm;

      const bool diag =
          config.diag_every > 0 && step_index % config.diag_every == 0;
      Vector true_grad;
      if (diag) {
        true_grad = full_gradient(problem, state.x);  // measurement only
        rec.grad_norm = true_grad.norm();
        rec.noise_norm = (true_grad - estimate.value).norm();
      }
      if (config.snapshot_every > 0 &&
          step_index % config.snapshot_every == 0)
        trace.snapshots.push_back(
            {k, s, state.x, state.anchor, state.anchor_full_gradient});

      double radius = update_radius(policy, est_norm);
      if (config.delta0_first_step && k == 0 && s == 0)
        radius = config.delta0;
      state.radius = radius;
      rec.radius = radius;

      Vector step_vec;
      if (!(est_norm > 0.0) || !(radius > 0.0)) {
        // Stationary estimate: zero step, iterate unchanged.
        step_vec = Vector::Zero(d);
        rec.step_norm = 0.0;
        rec.model_decrease = 0.0;
        rec.hessian_bound = 0.0;
      } else if (trust_region) {
        const auto model =
            build_model(problem, state, estimate, config.hessian, &history);
        Step step = config.subproblem == SubproblemSolver::steihaug
                        ? steihaug_cg(model, config.cg_tol, config.cg_max_iter)
                        : cauchy_step(model);
        rec.cauchy_ok = check_cauchy_decrease(model, step);
        if (!rec.cauchy_ok) {
          step = cauchy_step(model);  // certified fallback
          if (!check_cauchy_decrease(model, step))
            throw NumericError(
                "run: Cauchy decrease certificate failed after fallback at "
                "(k, s) = (" +
                std::to_string(k) + ", " + std::to_string(s) + ")");
        }
        step_vec = step.direction;
        rec.step_norm = step.direction.norm();
        rec.model_decrease = step.model_decrease;
        rec.hessian_bound = model.norm_bound;
      } else {
        step_vec = -config.alpha * estimate.value;
        rec.step_norm = step_vec.norm();
      }

      state.x += step_vec;
      const double f_next = evaluate_objective(problem, state.x);
      rec.actual_decrease = f_next - f_current;
      if (rec.model_decrease < 0.0)
        rec.rho = rec.actual_decrease / rec.model_decrease;

      // Pathwise one-step inequality: actual decrease against the certified
      // model decrease plus noise and curvature remainder terms.
      if (diag && trust_region && problem.constants) {
        const double lip = problem.constants->grad_lipschitz;
        const double khat = std::isnan(rec.hessian_bound) ? 0.0 : rec.hessian_bound;
        const double rhs = -est_norm * radius + 0.5 * khat * radius * radius +
                           rec.noise_norm * radius +
                           0.5 * (lip + khat) * radius * radius;
        rec.one_step_ok = rec.actual_decrease <= rhs + 1e-9;
        if (config.strict && !rec.one_step_ok)
          throw VerificationError(
              "run: one-step decrease inequality violated at (k, s) = (" +
              std::to_string(k) + ", " + std::to_string(s) +
              "): lhs = " + format_g17(rec.actual_decrease) +
              ", rhs = " + format_g17(rhs));
      }

      prev_estimate = estimate.value;
      prev_step = step_vec;
      have_curvature_pair = rec.step_norm > 0.0;

      f_current = f_next;
      rec.evals = evals;
      trace.records.push_back(rec);
      ++step_index;

      if (config.stop.eval_budget > 0 && evals >= config.stop.eval_budget) {
        stop_reason = "eval_budget";
        stopped = true;
        break;
      }
    }
  }

  trace.final_x = state.x;
  trace.final_f = f_current;
  trace.final_grad_norm = full_gradient(problem, state.x).norm();
  trace.total_evals = evals;
  trace.stop_reason = stop_reason;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return trace;
}

}  // namespace detail

// Variance-reduced trust-region method: anchored full gradients, per-step
// variance-reduced estimates, radius from the policy, subproblem solved to at
// least Cauchy decrease, steps always accepted.
inline Trace run_trsvr(const FiniteSumProblem& problem, RunConfig config) {
  config.optimizer = OptimizerKind::trsvr;
  return detail::run_two_loop(problem, config, /*trust_region=*/true);
}

// SVRG baseline: same estimator and anchor schedule, fixed step -alpha.
inline Trace run_svrg(const FiniteSumProblem& problem, RunConfig config) {
  config.optimizer = OptimizerKind::svrg;
  return detail::run_two_loop(problem, config, /*trust_region=*/false);
}

// Noise-free control: the trust-region method with b = N at every step.
inline Trace run_tr_deterministic(const FiniteSumProblem& problem,
                                  RunConfig config) {
  config.optimizer = OptimizerKind::tr_deterministic;
  config.batch_size = problem.num_components;
  return detail::run_two_loop(problem, config, /*trust_region=*/true);
}

// Plain mini-batch SGD with fixed step; no anchors, b evaluations per step.
inline Trace run_sgd(const FiniteSumProblem& problem, RunConfig config) {
  config.optimizer = OptimizerKind::sgd;
  detail::validate_run_config(problem, config);
  config = detail::resolve_defaults(problem, config);
  const auto t_start = std::chrono::steady_clock::now();

  const int n = problem.num_components;
  const BatchSampler sampler{n, config.batch_size, config.sampling,
                             RandomSource{config.seed}};
  Trace trace;
  trace.config = config;
  Vector x = config.x0;
  long long evals = 0;
  long long step_index = 0;
  double f_current = evaluate_objective(problem, x);
  std::string stop_reason = "completed";
  bool stopped = false;

  for (int k = 0; k < config.outer_iters && !stopped; ++k) {
    for (int s = 0; s < config.inner_iters; ++s) {
      const bool diag =
          config.diag_every > 0 && step_index % config.diag_every == 0;
      Vector true_grad;
      if (diag) {
        true_grad = full_gradient(problem, x);  // measurement only
        if (config.stop.grad_tol > 0.0 &&
            true_grad.norm() <= config.stop.grad_tol) {
          stop_reason = "grad_tol";
          stopped = true;
          break;
        }
      }

      const auto batch = sample_batch(sampler, k, s);
      const auto estimate = minibatch_gradient(problem, x, batch);
      evals += config.batch_size;

      IterationRecord rec;
      rec.k = k;
      rec.s = s;
      rec.f = f_current;
      rec.vr_grad_norm = estimate.value.norm();
      if (diag) {
        rec.grad_norm = true_grad.norm();
        rec.noise_norm = (true_grad - estimate.value).norm();
      }

      const Vector step_vec = -config.alpha * estimate.value;
      x += step_vec;
      rec.step_norm = step_vec.norm();
      const double f_next = evaluate_objective(problem, x);
      rec.actual_decrease = f_next - f_current;
      f_current = f_next;
      rec.evals = evals;
      trace.records.push_back(rec);
      ++step_index;

      if (config.stop.eval_budget > 0 && evals >= config.stop.eval_budget) {
        stop_reason = "eval_budget";
        stopped = true;
        break;
      }
    }
  }

  trace.final_x = x;
  trace.final_f = f_current;
  trace.final_grad_norm = full_gradient(problem, x).norm();
  trace.total_evals = evals;
  trace.stop_reason = stop_reason;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return trace;
}

inline Trace run_optimizer(const FiniteSumProblem& problem,
                           const RunConfig& config) {
  switch (config.optimizer) {
    case OptimizerKind::trsvr:
      return run_trsvr(problem, config);
    case OptimizerKind::sgd:
      return run_sgd(problem, config);
    case OptimizerKind::svrg:
      return run_svrg(problem, config);
    case OptimizerKind::tr_deterministic:
      return run_tr_deterministic(problem, config);
  }
  throw InputError("run_optimizer: unknown optimizer kind");
}

}  // namespace trsvr
