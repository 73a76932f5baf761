#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/problems.hpp"
#include "trsvr/theory.hpp"

using namespace trsvr;
using test::dense_dataset;

namespace {

TheoryConstants worked_constants() {
  TheoryConstants c;
  c.grad_lipschitz = 1.0;
  c.hessian_bound = 1.0;
  c.hessian_approx_bound = 1.0;
  c.component_lipschitz = 1.0;
  c.f_lower_bound = 0.0;
  c.alpha = 0.1;
  c.z = 1.0;
  c.batch_size = 1;
  c.inner_iters = 2;
  return c;
}

std::vector<Vector> sample_points(const FiniteSumProblem& p, int count,
                                  std::uint64_t seed = 3) {
  StreamRng rng(seed, 0, 0);
  std::vector<Vector> pts;
  for (int i = 0; i < count; ++i)
    pts.push_back(test::random_vector(rng, p.dimension));
  return pts;
}

RunConfig proportional_config(int b, int inner, int outer, double alpha) {
  RunConfig c;
  c.batch_size = b;
  c.inner_iters = inner;
  c.outer_iters = outer;
  c.alpha = alpha;
  c.radius_mode = RadiusMode::proportional;
  c.hessian.mode = HessianMode::exact_hvp;
  c.subproblem = SubproblemSolver::cauchy;
  c.seed = 11;
  c.diag_every = 1;
  c.warn_hypothesis = false;
  return c;
}

}  // namespace

TEST_CASE("lyapunov schedule worked example", "[theory]") {
  const auto sched = lyapunov_schedule(worked_constants());
  REQUIRE(sched.lambda.size() == 3);
  REQUIRE(sched.Lambda.size() == 2);
  REQUIRE(sched.lambda[2] == 0.0);
  REQUIRE_THAT(sched.lambda[1], Catch::Matchers::WithinRel(0.015, 1e-14));
  REQUIRE_THAT(sched.Lambda[1], Catch::Matchers::WithinRel(0.025, 1e-14));
  REQUIRE_THAT(sched.Lambda[0], Catch::Matchers::WithinRel(0.02335, 1e-14));
  REQUIRE_THAT(sched.Lambda_min, Catch::Matchers::WithinRel(0.02335, 1e-14));
}

TEST_CASE("lyapunov schedule properties", "[theory]") {
  auto c = worked_constants();
  c.inner_iters = 6;
  c.component_lipschitz = 2.5;
  c.batch_size = 3;
  c.z = 0.7;
  const auto sched = lyapunov_schedule(c);

  SECTION("terminal coefficient is exactly alpha/4") {
    REQUIRE(sched.Lambda.back() == 0.25 * c.alpha);
  }
  SECTION("recursion is self-consistent") {
    const double rate =
        c.component_lipschitz * c.component_lipschitz / c.batch_size;
    const double inject = 0.5 *
                          (c.grad_lipschitz + 2.0 * c.hessian_approx_bound) *
                          c.alpha * c.alpha * rate;
    const double growth =
        1.0 + c.alpha * c.z + (c.alpha * c.alpha + c.alpha / c.z) * rate;
    for (int s = 0; s < c.inner_iters; ++s) {
      REQUIRE_THAT(sched.lambda[s],
                   Catch::Matchers::WithinRel(
                       inject + sched.lambda[s + 1] * growth, 1e-14));
      REQUIRE_THAT(sched.Lambda[s],
                   Catch::Matchers::WithinRel(
                       0.25 * c.alpha - sched.lambda[s + 1] *
                                            (1.0 + 1.0 / (c.alpha * c.z)) *
                                            c.alpha * c.alpha,
                       1e-14));
    }
    REQUIRE(sched.Lambda_min ==
            *std::min_element(sched.Lambda.begin(), sched.Lambda.end()));
  }
  SECTION("penalties are nonnegative and decrease toward the terminal index") {
    for (int s = 0; s < c.inner_iters; ++s) {
      REQUIRE(sched.lambda[s] >= 0.0);
      REQUIRE(sched.lambda[s] >= sched.lambda[s + 1]);
    }
  }
  SECTION("minimum coefficient vanishes from above as alpha shrinks") {
    double prev = 1.0;
    for (double alpha : {1e-2, 1e-3, 1e-4}) {
      auto ca = c;
      ca.alpha = alpha;
      const auto s = lyapunov_schedule(ca);
      REQUIRE(s.Lambda_min > 0.0);
      REQUIRE(s.Lambda_min <= 0.25 * alpha);
      REQUIRE(s.Lambda_min < prev);
      prev = s.Lambda_min;
    }
  }
  SECTION("validation") {
    auto bad = c;
    bad.alpha = 0.0;
    REQUIRE_THROWS_AS(lyapunov_schedule(bad), InputError);
    bad = c;
    bad.z = -1.0;
    REQUIRE_THROWS_AS(lyapunov_schedule(bad), InputError);
  }
}

TEST_CASE("convergence bound", "[theory]") {
  SECTION("zero gap gives zero") {
    REQUIRE(convergence_bound(1.5, 1.5, 3, 2, 0.1) == 0.0);
  }
  SECTION("worked example") {
    REQUIRE_THAT(convergence_bound(1.0, 0.0, 0, 1, 0.025),
                 Catch::Matchers::WithinRel(40.0, 1e-14));
  }
  SECTION("doubling the outer horizon halves the bound") {
    const double b1 = convergence_bound(1.0, 0.0, 0, 1, 0.025);
    const double b2 = convergence_bound(1.0, 0.0, 1, 1, 0.025);
    REQUIRE(b2 == 0.5 * b1);
  }
  SECTION("homogeneous in the objective gap") {
    const double base = convergence_bound(1.25, 0.25, 4, 3, 0.01);
    const double scaled = convergence_bound(2.25, 0.25, 4, 3, 0.01);
    REQUIRE(scaled == 2.0 * base);
  }
  SECTION("invalid inputs") {
    REQUIRE_THROWS_AS(convergence_bound(1.0, 0.0, 0, 1, 0.0), InputError);
    REQUIRE_THROWS_AS(convergence_bound(1.0, 0.0, 0, 1, -0.1), InputError);
    REQUIRE_THROWS_AS(convergence_bound(0.0, 1.0, 0, 1, 0.1), InputError);
  }
}

TEST_CASE("z grid search maximizes the minimum coefficient", "[theory]") {
  auto c = worked_constants();
  c.component_lipschitz = 4.0;
  c.inner_iters = 5;
  c.alpha = 0.02;
  const auto best = search_z(c);
  for (double z = 1e-2; z <= 1e2 * (1.0 + 1e-12); z *= std::pow(10.0, 0.1)) {
    auto cz = c;
    cz.z = z;
    REQUIRE(best.schedule.Lambda_min >=
            lyapunov_schedule(cz).Lambda_min - 1e-15);
  }
  REQUIRE(best.z >= 1e-2);
  REQUIRE(best.z <= 1e2 * (1.0 + 1e-12));
}

TEST_CASE("estimate_constants", "[theory]") {
  SECTION("closed forms pass through") {
    auto p = make_least_squares(dense_dataset({{1.0, 0.0}}, {0.0}), 0.0);
    const auto c = estimate_constants(p, sample_points(p, 4));
    REQUIRE(c.closed_form);
    REQUIRE_THAT(c.grad_lipschitz, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(c.component_lipschitz == 1.0);
    REQUIRE(c.sigma_g >= 0.0);
  }
  SECTION("empirical fallback brackets the true constant") {
    // Hand-built quadratic without attached constants: f_i = c_i/2 x^2.
    FiniteSumProblem p;
    p.num_components = 3;
    p.dimension = 1;
    p.name = "custom";
    p.component_value = [](int i, const Vector& x) {
      return 0.5 * (i + 1.0) * x[0] * x[0];
    };
    p.component_gradient = [](int i, const Vector& x) {
      Vector g(1);
      g[0] = (i + 1.0) * x[0];
      return g;
    };
    const auto c = estimate_constants(p, sample_points(p, 6));
    REQUIRE_FALSE(c.closed_form);
    // True constants: mean gradient slope 2, worst component slope 3.
    REQUIRE_THAT(c.grad_lipschitz, Catch::Matchers::WithinRel(2.2, 1e-9));
    REQUIRE_THAT(c.component_lipschitz, Catch::Matchers::WithinRel(3.3, 1e-9));
  }
  SECTION("needs at least two points") {
    auto p = make_least_squares(dense_dataset({{1.0}}, {0.0}), 0.0);
    REQUIRE_THROWS_AS(estimate_constants(p, sample_points(p, 1)), InputError);
  }
}

TEST_CASE("verify_variance_bound", "[theory]") {
  auto p = make_least_squares(
      synth_data(51, 6, 3, SynthKind::gaussian_ls, 0.4), 0.1);
  auto c = estimate_constants(p, sample_points(p, 4));
  c.batch_size = 2;
  StreamRng rng(61, 0, 0);

  SECTION("exact enumeration passes on random pairs") {
    std::vector<std::pair<Vector, Vector>> pairs;
    for (int i = 0; i < 20; ++i) {
      const Vector x0 = test::random_vector(rng, 3);
      pairs.emplace_back(x0 + test::random_vector(rng, 3, 0.5), x0);
    }
    const auto report = verify_variance_bound(
        p, c, pairs, VarianceCheckMode::exact_enumeration);
    REQUIRE(report.lines.size() == 20);
    REQUIRE(report.all_ok());
  }
  SECTION("coincident pair is an exact zero") {
    const Vector x0 = test::random_vector(rng, 3);
    const auto report = verify_variance_bound(
        p, c, {{x0, x0}}, VarianceCheckMode::exact_enumeration);
    REQUIRE(report.lines.front().lhs == 0.0);
    REQUIRE(report.lines.front().rhs == 0.0);
    REQUIRE(report.all_ok());
  }
  SECTION("full batch gives a vanishing left side") {
    auto cb = c;
    cb.batch_size = 6;
    const Vector x0 = test::random_vector(rng, 3);
    const auto report = verify_variance_bound(
        p, cb, {{x0 + test::random_vector(rng, 3), x0}},
        VarianceCheckMode::exact_enumeration);
    REQUIRE(report.lines.front().lhs <= 1e-28);
    REQUIRE(report.all_ok());
  }
  SECTION("oversized enumeration directs to monte carlo") {
    auto pbig = make_least_squares(
        synth_data(52, 40, 3, SynthKind::gaussian_ls, 0.4), 0.1);
    auto cbig = estimate_constants(pbig, sample_points(pbig, 3));
    cbig.batch_size = 20;
    REQUIRE_THROWS_WITH(
        verify_variance_bound(pbig, cbig, {},
                              VarianceCheckMode::exact_enumeration),
        Catch::Matchers::ContainsSubstring("monte_carlo"));
  }
  SECTION("monte carlo mode passes within its standard error") {
    auto pm = make_least_squares(
        synth_data(53, 12, 3, SynthKind::gaussian_ls, 0.4), 0.1);
    auto cm = estimate_constants(pm, sample_points(pm, 3));
    cm.batch_size = 3;
    const Vector x0 = test::random_vector(rng, 3);
    const auto report = verify_variance_bound(
        pm, cm, {{x0 + test::random_vector(rng, 3, 0.5), x0}},
        VarianceCheckMode::monte_carlo, 20000, RandomSource{5});
    REQUIRE(report.all_ok());
  }
}

TEST_CASE("verify_decrease_lemmas", "[theory]") {
  auto p = make_logistic(
      synth_data(71, 20, 4, SynthKind::separable_logistic, 0.1), 0.1);
  auto base = estimate_constants(p, sample_points(p, 4));

  SECTION("full-batch trace passes with zero noise") {
    auto cfg = proportional_config(20, 4, 3, 0.5 * base.alpha_cap());
    cfg.snapshot_every = 4;
    const Trace trace = run_trsvr(p, cfg);
    auto c = base;
    c.alpha = cfg.alpha;
    c.batch_size = cfg.batch_size;
    c.inner_iters = cfg.inner_iters;
    DecreaseCheckOptions opts;
    opts.replay_trials = 50;
    opts.max_states = 2;
    const auto report = verify_decrease_lemmas(trace, p, c, opts);
    REQUIRE(report.all_ok());
    for (const auto& line : report.lines)
      if (line.name.rfind("one_step", 0) == 0)
        REQUIRE(line.status == CheckStatus::pass);
  }
  SECTION("stochastic trace passes pathwise and in expectation") {
    auto cfg = proportional_config(2, 5, 8, 0.5 * base.alpha_cap());
    cfg.snapshot_every = 10;
    const Trace trace = run_trsvr(p, cfg);
    auto c = base;
    c.alpha = cfg.alpha;
    c.batch_size = cfg.batch_size;
    c.inner_iters = cfg.inner_iters;
    DecreaseCheckOptions opts;
    opts.replay_trials = 300;
    opts.max_states = 3;
    const auto report = verify_decrease_lemmas(trace, p, c, opts);
    REQUIRE(report.all_ok());
    int expected_lines = 0;
    for (const auto& line : report.lines)
      if (line.name.rfind("expected_decrease", 0) == 0) ++expected_lines;
    REQUIRE(expected_lines == 3);
  }
  SECTION("clipped traces are refused") {
    auto cfg = proportional_config(2, 3, 2, 0.01);
    cfg.radius_mode = RadiusMode::clipped;
    const Trace trace = run_trsvr(p, cfg);
    REQUIRE_THROWS_WITH(verify_decrease_lemmas(trace, p, base),
                        Catch::Matchers::ContainsSubstring("proportional"));
  }
  SECTION("traces without per-step diagnostics are refused") {
    auto cfg = proportional_config(2, 3, 2, 0.01);
    cfg.diag_every = 2;
    const Trace trace = run_trsvr(p, cfg);
    REQUIRE_THROWS_AS(verify_decrease_lemmas(trace, p, base), InputError);
  }
  SECTION("oversized alpha skips the expectation check") {
    auto cfg = proportional_config(2, 3, 2, 0.01);
    cfg.snapshot_every = 3;
    const Trace trace = run_trsvr(p, cfg);
    auto c = base;
    c.alpha = 10.0 * c.alpha_cap();
    c.batch_size = cfg.batch_size;
    c.inner_iters = cfg.inner_iters;
    const auto report = verify_decrease_lemmas(trace, p, c);
    bool skipped = false;
    for (const auto& line : report.lines)
      skipped |= line.status == CheckStatus::skip &&
                 line.name.rfind("expected_decrease", 0) == 0;
    REQUIRE(skipped);
  }
}

TEST_CASE("verify_theorem_bound", "[theory]") {
  auto p = make_least_squares(
      synth_data(81, 20, 5, SynthKind::gaussian_ls, 0.5), 0.2);
  auto c = estimate_constants(p, sample_points(p, 4));

  SECTION("bound holds on a strongly convex quadratic") {
    const double alpha = std::min(0.25 * c.alpha_cap(), 0.02);
    auto cfg = proportional_config(5, 3, 6, alpha);
    c.alpha = alpha;
    c.batch_size = cfg.batch_size;
    c.inner_iters = cfg.inner_iters;
    const auto best = search_z(c);
    REQUIRE(best.schedule.meaningful());
    std::vector<Trace> traces;
    for (int r = 0; r < 5; ++r) {
      cfg.seed = 100 + r;
      traces.push_back(run_trsvr(p, cfg));
    }
    c.z = best.z;
    const auto report = verify_theorem_bound(traces, c, best.schedule);
    REQUIRE(report.all_ok());
    REQUIRE(report.lines.front().status == CheckStatus::pass);
  }
  SECTION("vacuous configurations are skipped, not failed") {
    auto cv = c;
    cv.alpha = 0.2;
    cv.z = 1.0;
    cv.batch_size = 1;
    cv.inner_iters = 8;
    const auto sched = lyapunov_schedule(cv);
    REQUIRE_FALSE(sched.meaningful());
    auto cfg = proportional_config(1, 8, 2, 0.05);
    const Trace trace = run_trsvr(p, cfg);
    const auto report = verify_theorem_bound({trace}, cv, sched);
    REQUIRE(report.lines.size() == 1);
    REQUIRE(report.lines.front().status == CheckStatus::skip);
    REQUIRE(report.all_ok());
  }
  SECTION("stationary start passes trivially") {
    // Zero labels from the zero point: every gradient is exactly zero and
    // the objective gap is zero, so both sides of the bound vanish.
    auto pz = make_least_squares(
        dense_dataset({{1.0, 0.5}, {0.25, -1.0}}, {0.0, 0.0}), 0.0);
    auto cfg = proportional_config(1, 1, 1, 0.01);
    const Trace trace = run_trsvr(pz, cfg);
    TheoryConstants cz;
    cz.grad_lipschitz = pz.constants->grad_lipschitz;
    cz.hessian_bound = pz.constants->hessian_bound;
    cz.hessian_approx_bound = cz.hessian_bound;
    cz.component_lipschitz = pz.constants->component_lipschitz;
    cz.f_lower_bound = 0.0;
    cz.alpha = cfg.alpha;
    cz.z = 1.0;
    cz.batch_size = 1;
    cz.inner_iters = 1;
    const auto sched = lyapunov_schedule(cz);
    REQUIRE(sched.meaningful());
    const auto report = verify_theorem_bound({trace}, cz, sched);
    REQUIRE(report.all_ok());
    REQUIRE(report.lines.front().lhs == 0.0);
  }
  SECTION("early-stopped traces are rejected") {
    auto cfg = proportional_config(5, 3, 6, 0.01);
    cfg.stop.eval_budget = 50;
    const Trace trace = run_trsvr(p, cfg);
    auto cz = c;
    cz.alpha = cfg.alpha;
    cz.batch_size = cfg.batch_size;
    cz.inner_iters = cfg.inner_iters;
    const auto sched = lyapunov_schedule(cz);
    REQUIRE_THROWS_AS(verify_theorem_bound({trace}, cz, sched), InputError);
  }
}

TEST_CASE("verifiers reject corrupted inputs", "[theory]") {
  // The checks must be able to fail: feed them violations and confirm FAIL
  // lines appear.
  auto p = make_least_squares(
      synth_data(91, 10, 3, SynthKind::gaussian_ls, 0.4), 0.1);
  auto c = estimate_constants(
      p, {Vector::Zero(3), Vector::Ones(3), 2.0 * Vector::Ones(3)});

  SECTION("variance bound with a sabotaged component constant") {
    auto bad = c;
    bad.component_lipschitz = 1e-8;
    bad.batch_size = 2;
    StreamRng rng(92, 0, 0);
    const Vector x0 = test::random_vector(rng, 3);
    const auto report = verify_variance_bound(
        p, bad, {{x0 + test::random_vector(rng, 3), x0}},
        VarianceCheckMode::exact_enumeration);
    REQUIRE(report.failures() == 1);
  }
  SECTION("one-step inequality with a corrupted record") {
    auto cfg = proportional_config(2, 3, 2, 0.01);
    Trace trace = run_trsvr(p, cfg);
    trace.records[3].actual_decrease = 1.0;  // far above any valid bound
    auto cc = c;
    cc.alpha = cfg.alpha;
    DecreaseCheckOptions opts;
    opts.max_states = 0;
    const auto report = verify_decrease_lemmas(trace, p, cc, opts);
    REQUIRE(report.failures() == 1);
    REQUIRE(report.lines[3].status == CheckStatus::fail);
  }
  SECTION("global bound with an inflated lower bound") {
    auto cfg = proportional_config(2, 3, 4, 0.01);
    const Trace trace = run_trsvr(p, cfg);
    auto cc = c;
    cc.alpha = cfg.alpha;
    cc.batch_size = 2;
    cc.inner_iters = 3;
    cc.z = 1.0;
    const auto sched = lyapunov_schedule(cc);
    REQUIRE(sched.meaningful());
    // Shrink the objective gap to almost nothing: the bound collapses below
    // the measured average.
    cc.f_lower_bound = trace.records.front().f - 1e-12;
    const auto report = verify_theorem_bound({trace}, cc, sched);
    REQUIRE(report.failures() == 1);
  }
}

TEST_CASE("combination enumeration", "[theory]") {
  REQUIRE(binomial(6, 2) == 15);
  REQUIRE(binomial(8, 4) == 70);
  REQUIRE(binomial(5, 0) == 1);
  REQUIRE(binomial(5, 6) == 0);
  int count = 0;
  std::set<std::vector<int>> seen;
  for_each_combination(5, 3, [&](const std::vector<int>& idx) {
    REQUIRE(idx.size() == 3);
    REQUIRE(std::is_sorted(idx.begin(), idx.end()));
    seen.insert(idx);
    ++count;
  });
  REQUIRE(count == 10);
  REQUIRE(seen.size() == 10);
}

TEST_CASE("report bookkeeping", "[theory]") {
  Report r;
  r.add("a", true, 1.0, 2.0);
  r.skip("b", "gated");
  REQUIRE(r.all_ok());
  REQUIRE(r.failures() == 0);
  r.add("c", false, 3.0, 2.0);
  REQUIRE_FALSE(r.all_ok());
  REQUIRE(r.failures() == 1);
}
