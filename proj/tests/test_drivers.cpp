#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "helpers.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/problems.hpp"

using namespace trsvr;
using test::dense_dataset;

namespace {

FiniteSumProblem quadratic(std::uint64_t seed, int n, int d, double reg) {
  return make_least_squares(synth_data(seed, n, d, SynthKind::gaussian_ls, 0.3),
                            reg);
}

RunConfig base_config(int b, int inner, int outer, double alpha) {
  RunConfig c;
  c.batch_size = b;
  c.inner_iters = inner;
  c.outer_iters = outer;
  c.alpha = alpha;
  c.radius_mode = RadiusMode::proportional;
  c.hessian.mode = HessianMode::identity_scaled;
  c.hessian.identity_scale = 1.0;
  c.subproblem = SubproblemSolver::cauchy;
  c.seed = 7;
  c.warn_hypothesis = false;
  return c;
}

bool records_equal(const IterationRecord& a, const IterationRecord& b) {
  auto same = [](double x, double y) {
    return std::memcmp(&x, &y, sizeof(double)) == 0;
  };
  return a.k == b.k && a.s == b.s && same(a.f, b.f) &&
         same(a.grad_norm, b.grad_norm) &&
         same(a.vr_grad_norm, b.vr_grad_norm) && same(a.radius, b.radius) &&
         same(a.step_norm, b.step_norm) &&
         same(a.model_decrease, b.model_decrease) &&
         same(a.actual_decrease, b.actual_decrease) && a.evals == b.evals;
}

}  // namespace

TEST_CASE("full-batch trsvr reduces to gradient descent", "[drivers]") {
  auto p = quadratic(101, 10, 3, 0.1);
  const double alpha = 0.5 / (2.0 * (p.constants->grad_lipschitz + 2.0));
  auto cfg = base_config(10, 5, 10, alpha);
  const Trace trace = run_trsvr(p, cfg);
  REQUIRE(trace.records.size() == 50);

  Vector x = Vector::Zero(3);
  for (const auto& rec : trace.records) {
    REQUIRE(std::abs(rec.f - evaluate_objective(p, x)) <= 1e-12);
    x -= alpha * full_gradient(p, x);
  }
  REQUIRE((trace.final_x - x).cwiseAbs().maxCoeff() <= 1e-12);
  // Monotone descent under the step-size hypothesis with zero noise.
  for (const auto& rec : trace.records)
    REQUIRE(rec.actual_decrease <= 1e-15);
}

TEST_CASE("tr_deterministic equals full-batch trsvr bitwise", "[drivers]") {
  auto p = quadratic(102, 8, 3, 0.2);
  auto cfg = base_config(8, 4, 6, 0.05);
  const Trace a = run_trsvr(p, cfg);
  cfg.batch_size = 1;  // overridden to N by the deterministic driver
  const Trace b = run_tr_deterministic(p, cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    REQUIRE(records_equal(a.records[i], b.records[i]));
  REQUIRE(std::memcmp(a.final_x.data(), b.final_x.data(),
                      sizeof(double) * 3) == 0);
}

TEST_CASE("svrg baseline", "[drivers]") {
  auto p = quadratic(103, 9, 3, 0.1);
  SECTION("full batch matches gradient descent") {
    auto cfg = base_config(9, 3, 8, 0.04);
    const Trace trace = run_svrg(p, cfg);
    Vector x = Vector::Zero(3);
    for (const auto& rec : trace.records) {
      REQUIRE(std::abs(rec.f - evaluate_objective(p, x)) <= 1e-13);
      x -= cfg.alpha * full_gradient(p, x);
    }
    REQUIRE((trace.final_x - x).cwiseAbs().maxCoeff() <= 1e-13);
  }
  SECTION("anchor steps use the exact full gradient") {
    auto cfg = base_config(2, 4, 5, 0.04);
    const Trace trace = run_svrg(p, cfg);
    for (const auto& rec : trace.records)
      if (rec.s == 0) {
        REQUIRE(rec.noise_norm == 0.0);
        REQUIRE(rec.vr_grad_norm == rec.grad_norm);
      }
  }
}

TEST_CASE("sgd baseline", "[drivers]") {
  SECTION("single hand-computed step") {
    // f_i(x) = 2 x_0, so every gradient estimate is (2, 0).
    FiniteSumProblem p;
    p.num_components = 1;
    p.dimension = 2;
    p.name = "linear";
    p.component_value = [](int, const Vector& x) { return 2.0 * x[0]; };
    p.component_gradient = [](int, const Vector&) {
      Vector g(2);
      g << 2.0, 0.0;
      return g;
    };
    auto cfg = base_config(1, 1, 1, 0.1);
    Vector x0(2);
    x0 << 1.0, 1.0;
    cfg.x0 = x0;
    const Trace trace = run_sgd(p, cfg);
    REQUIRE_THAT(trace.final_x[0], Catch::Matchers::WithinAbs(0.8, 1e-15));
    REQUIRE(trace.final_x[1] == 1.0);
  }
  SECTION("full batch is gradient descent") {
    auto p = quadratic(104, 7, 2, 0.1);
    auto cfg = base_config(7, 3, 5, 0.03);
    const Trace trace = run_sgd(p, cfg);
    Vector x = Vector::Zero(2);
    for (int i = 0; i < 15; ++i) x -= cfg.alpha * full_gradient(p, x);
    REQUIRE((trace.final_x - x).cwiseAbs().maxCoeff() <= 1e-13);
  }
}

TEST_CASE("evaluation accounting", "[drivers]") {
  auto p = quadratic(105, 12, 3, 0.1);
  const int b = 3, S = 4, K = 5;
  SECTION("anchored methods cost N per outer loop plus 2b per inner step") {
    for (auto run : {run_trsvr, run_svrg}) {
      const Trace trace = run(p, base_config(b, S, K, 0.02));
      REQUIRE(trace.total_evals == K * (12 + 2 * b * S));
      long long expect = 0;
      for (const auto& rec : trace.records) {
        if (rec.s == 0) expect += 12;
        expect += 2 * b;
        REQUIRE(rec.evals == expect);
      }
    }
  }
  SECTION("sgd costs b per step") {
    const Trace trace = run_sgd(p, base_config(b, S, K, 0.02));
    REQUIRE(trace.total_evals == static_cast<long long>(K) * S * b);
  }
}

TEST_CASE("identical configs give bitwise identical traces", "[drivers]") {
  auto p = make_logistic(
      synth_data(21, 14, 4, SynthKind::separable_logistic, 0.1), 0.05);
  auto cfg = base_config(3, 4, 6, 0.05);
  cfg.hessian.mode = HessianMode::exact_hvp;
  cfg.subproblem = SubproblemSolver::steihaug;
  for (auto kind : {OptimizerKind::trsvr, OptimizerKind::sgd,
                    OptimizerKind::svrg, OptimizerKind::tr_deterministic}) {
    cfg.optimizer = kind;
    const Trace a = run_optimizer(p, cfg);
    const Trace b = run_optimizer(p, cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
      REQUIRE(records_equal(a.records[i], b.records[i]));
    REQUIRE(std::memcmp(a.final_x.data(), b.final_x.data(),
                        sizeof(double) * 4) == 0);
  }
}

TEST_CASE("stationary start never moves", "[drivers]") {
  // Zero labels and zero start: every gradient is exactly zero.
  auto p = make_least_squares(
      dense_dataset({{1.0, 2.0}, {3.0, -1.0}}, {0.0, 0.0}), 0.0);
  auto cfg = base_config(1, 3, 3, 0.1);
  const Trace trace = run_trsvr(p, cfg);
  REQUIRE(trace.final_x.norm() == 0.0);
  for (const auto& rec : trace.records) {
    REQUIRE(rec.step_norm == 0.0);
    REQUIRE(rec.radius == 0.0);
    REQUIRE(rec.actual_decrease == 0.0);
  }
}

TEST_CASE("stop rules", "[drivers]") {
  auto p = quadratic(106, 10, 3, 0.3);
  SECTION("gradient tolerance stops at an anchor") {
    auto cfg = base_config(10, 2, 50, 0.5);
    cfg.stop.grad_tol = 1e-6;
    const Trace trace = run_trsvr(p, cfg);
    REQUIRE(trace.stop_reason == "grad_tol");
    REQUIRE(trace.records.size() < 100);
    REQUIRE(trace.final_grad_norm <= 1e-6);
  }
  SECTION("evaluation budget stops mid-run") {
    auto cfg = base_config(2, 5, 50, 0.05);
    cfg.stop.eval_budget = 100;
    const Trace trace = run_trsvr(p, cfg);
    REQUIRE(trace.stop_reason == "eval_budget");
    REQUIRE(trace.total_evals >= 100);
    REQUIRE(trace.total_evals <= 100 + 2 * cfg.batch_size + 10);
  }
}

TEST_CASE("delta0 applies only to the very first step when enabled",
          "[drivers]") {
  auto p = quadratic(112, 8, 3, 0.1);
  auto cfg = base_config(2, 3, 2, 0.05);
  cfg.delta0 = 0.125;
  cfg.delta0_first_step = true;
  const Trace trace = run_trsvr(p, cfg);
  REQUIRE(trace.records.front().radius == 0.125);
  const auto policy = RadiusPolicy::proportional(cfg.alpha);
  for (std::size_t i = 1; i < trace.records.size(); ++i)
    REQUIRE(trace.records[i].radius ==
            update_radius(policy, trace.records[i].vr_grad_norm));

  // Disabled by default: the policy runs from the first step.
  cfg.delta0_first_step = false;
  const Trace plain = run_trsvr(p, cfg);
  REQUIRE(plain.records.front().radius ==
          update_radius(policy, plain.records.front().vr_grad_norm));
}

TEST_CASE("sgd stops before stepping once the tolerance is met", "[drivers]") {
  auto p = quadratic(113, 8, 3, 0.4);
  auto cfg = base_config(8, 4, 200, 0.4);
  cfg.optimizer = OptimizerKind::sgd;
  cfg.stop.grad_tol = 1e-5;
  const Trace trace = run_sgd(p, cfg);
  REQUIRE(trace.stop_reason == "grad_tol");
  REQUIRE(trace.final_grad_norm <= 1e-5);
  // Every recorded row carries a full step and the eval count matches the
  // rows taken.
  REQUIRE(trace.total_evals ==
          static_cast<long long>(trace.records.size()) * cfg.batch_size);
}

TEST_CASE("clipped policy radii follow the three-case rule", "[drivers]") {
  auto p = quadratic(107, 10, 3, 0.1);
  auto cfg = base_config(2, 4, 6, 0.05);
  cfg.radius_mode = RadiusMode::clipped;
  cfg.eta1 = 10.0;
  cfg.eta2 = 0.1;
  const Trace trace = run_trsvr(p, cfg);
  const auto policy = RadiusPolicy::clipped(cfg.alpha, cfg.eta1, cfg.eta2);
  for (const auto& rec : trace.records)
    REQUIRE(rec.radius == update_radius(policy, rec.vr_grad_norm));
}

TEST_CASE("per-iteration inequality flags hold in strict mode", "[drivers]") {
  auto p = make_logistic(
      synth_data(31, 20, 4, SynthKind::separable_logistic, 0.1), 0.1);
  const double cap =
      1.0 / (2.0 * (p.constants->grad_lipschitz +
                    2.0 * p.constants->hessian_bound));
  auto cfg = base_config(2, 5, 8, 0.9 * cap);
  cfg.hessian.mode = HessianMode::exact_hvp;
  cfg.strict = true;
  const Trace trace = run_trsvr(p, cfg);  // would throw on any violation
  for (const auto& rec : trace.records) {
    REQUIRE(rec.one_step_ok);
    REQUIRE(rec.cauchy_ok);
  }
}

TEST_CASE("snapshots follow the cadence", "[drivers]") {
  auto p = quadratic(108, 8, 3, 0.1);
  auto cfg = base_config(2, 5, 4, 0.03);
  cfg.snapshot_every = 7;
  const Trace trace = run_trsvr(p, cfg);
  REQUIRE(trace.snapshots.size() == 3);  // steps 0, 7, 14 of 20
  for (const auto& snap : trace.snapshots) {
    REQUIRE(snap.anchor_full_gradient.size() == 3);
    if (snap.s == 0)
      REQUIRE(std::memcmp(snap.x.data(), snap.anchor.data(),
                          sizeof(double) * 3) == 0);
  }
}

TEST_CASE("lbfgs mode runs and certifies decrease", "[drivers]") {
  auto p = quadratic(109, 15, 4, 0.2);
  auto cfg = base_config(15, 5, 8, 0.05);
  cfg.hessian.mode = HessianMode::lbfgs;
  cfg.hessian.lbfgs_memory = 4;
  cfg.subproblem = SubproblemSolver::steihaug;
  const Trace trace = run_trsvr(p, cfg);
  REQUIRE(trace.final_f < trace.records.front().f);
  for (const auto& rec : trace.records) REQUIRE(rec.model_decrease <= 1e-15);
}

TEST_CASE("config validation names the offending field", "[drivers]") {
  auto p = quadratic(110, 5, 2, 0.1);
  auto cfg = base_config(6, 2, 2, 0.1);
  REQUIRE_THROWS_WITH(run_trsvr(p, cfg),
                      Catch::Matchers::ContainsSubstring("optimizer.batch_size"));
  cfg = base_config(2, 2, 2, -1.0);
  REQUIRE_THROWS_WITH(run_trsvr(p, cfg),
                      Catch::Matchers::ContainsSubstring("optimizer.alpha"));
  cfg = base_config(2, 2, 2, 0.1);
  cfg.x0 = Vector::Zero(5);
  REQUIRE_THROWS_WITH(run_trsvr(p, cfg),
                      Catch::Matchers::ContainsSubstring("optimizer.x0"));
}

TEST_CASE("randomized configuration soak", "[drivers]") {
  // Any sampled configuration either completes with a finite, well-formed
  // trace or aborts with a numeric diagnostic; nothing else.
  StreamRng rng(777, 0, 0);
  int completed = 0, diverged = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(12));
    const int d = 2 + static_cast<int>(rng.below(5));
    const std::uint64_t data_seed = rng.next();
    FiniteSumProblem problem;
    switch (rng.below(3)) {
      case 0:
        problem = make_least_squares(
            synth_data(data_seed, n, d, SynthKind::gaussian_ls, 0.3), 0.05);
        break;
      case 1:
        problem = make_logistic(
            synth_data(data_seed, n, d, SynthKind::separable_logistic, 0.1),
            0.05);
        break;
      default:
        problem = make_robust_nonconvex(
            synth_data(data_seed, n, d, SynthKind::gaussian_ls, 0.3), 0.05);
    }

    RunConfig cfg;
    cfg.optimizer = static_cast<OptimizerKind>(rng.below(4));
    cfg.batch_size = 1 + static_cast<int>(rng.below(n));
    cfg.inner_iters = 1 + static_cast<int>(rng.below(6));
    cfg.outer_iters = 1 + static_cast<int>(rng.below(6));
    cfg.alpha = 1e-3 + 0.5 * rng.uniform01();
    cfg.radius_mode =
        rng.below(2) == 0 ? RadiusMode::proportional : RadiusMode::clipped;
    cfg.hessian.mode = static_cast<HessianMode>(rng.below(4));
    cfg.hessian.identity_scale = 0.5 + rng.uniform01();
    cfg.hessian.norm_cap = rng.below(3) == 0 ? 0.5 + rng.uniform01() : 0.0;
    cfg.subproblem = rng.below(2) == 0 ? SubproblemSolver::cauchy
                                       : SubproblemSolver::steihaug;
    cfg.sampling = rng.below(4) == 0 ? SamplingMode::with_replacement
                                     : SamplingMode::without_replacement;
    cfg.seed = rng.next();
    cfg.diag_every = static_cast<int>(rng.below(3));
    cfg.snapshot_every = static_cast<int>(rng.below(4));
    cfg.warn_hypothesis = false;
    const bool tr = cfg.optimizer == OptimizerKind::trsvr ||
                    cfg.optimizer == OptimizerKind::tr_deterministic;

    try {
      const Trace trace = run_optimizer(problem, cfg);
      ++completed;
      const int b = cfg.optimizer == OptimizerKind::tr_deterministic
                        ? n
                        : cfg.batch_size;
      REQUIRE(trace.records.size() ==
              static_cast<std::size_t>(cfg.outer_iters) * cfg.inner_iters);
      long long prev_evals = 0;
      for (const auto& rec : trace.records) {
        REQUIRE(std::isfinite(rec.f));
        REQUIRE(std::isfinite(rec.actual_decrease));
        REQUIRE(rec.evals > prev_evals);
        prev_evals = rec.evals;
        if (tr) {
          REQUIRE(rec.step_norm <= rec.radius + 1e-12);
          REQUIRE(rec.model_decrease <= 1e-15);
        }
        (void)b;
      }
      REQUIRE(trace.final_x.allFinite());
    } catch (const NumericError&) {
      ++diverged;  // oversized fixed steps may blow up; the abort is clean
    }
  }
  REQUIRE(completed + diverged == 60);
  REQUIRE(completed >= 30);  // most sampled configs are stable
}

TEST_CASE("run_optimizer dispatches on the configured kind", "[drivers]") {
  auto p = quadratic(111, 6, 2, 0.1);
  auto cfg = base_config(2, 2, 2, 0.05);
  for (auto kind : {OptimizerKind::trsvr, OptimizerKind::sgd,
                    OptimizerKind::svrg, OptimizerKind::tr_deterministic}) {
    cfg.optimizer = kind;
    const Trace trace = run_optimizer(p, cfg);
    REQUIRE(trace.config.optimizer == kind);
    REQUIRE(trace.records.size() == 4);
  }
}
