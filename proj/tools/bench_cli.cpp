// Benchmark and verification front end: configures experiments, runs the
// optimizers, persists metrics, and executes the theory checks.
//
// Exit codes: 0 success, 1 validation error, 2 numeric failure,
// 3 verification failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "trsvr/trsvr.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

trsvr::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  trsvr::ExperimentConfig cfg = trsvr::load_config(args.config_path);
  for (const auto& spec : args.overrides) trsvr::apply_override(cfg, spec);
  return cfg;
}

std::string problem_signature(const trsvr::ExperimentConfig& cfg) {
  // Problem-section slice of the canonical serialization.
  std::ostringstream sig;
  sig << cfg.problem.kind << '|' << cfg.problem.source << '|'
      << cfg.problem.path << '|' << cfg.problem.n << '|' << cfg.problem.d
      << '|' << cfg.problem.synth << '|' << trsvr::format_g17(cfg.problem.noise)
      << '|' << trsvr::format_g17(cfg.problem.reg) << '|'
      << cfg.problem.data_seed << '|' << cfg.problem.feature_dim;
  return sig.str();
}

void require_tr_algorithm(const trsvr::RunConfig& rc, const char* what) {
  if (rc.optimizer != trsvr::OptimizerKind::trsvr &&
      rc.optimizer != trsvr::OptimizerKind::tr_deterministic)
    throw trsvr::InputError(std::string(what) +
                            " applies to the trust-region method; set "
                            "optimizer.algorithm to trsvr or tr_deterministic");
}

fs::path prepare_output_dir(const trsvr::ExperimentConfig& cfg) {
  fs::path dir(cfg.output.dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir))
    throw trsvr::InputError("output.dir: cannot create '" + dir.string() +
                            "': " + ec.message());
  return dir;
}

int cmd_run(const CommonArgs& args) {
  const auto cfg = load_with_overrides(args);
  const auto problem = trsvr::build_problem(cfg.problem);
  const auto rc = trsvr::make_run_config(cfg);
  const trsvr::Trace trace = trsvr::run_optimizer(problem, rc);

  const fs::path dir = prepare_output_dir(cfg);
  const fs::path csv_path = dir / cfg.output.metrics;
  {
    std::ofstream out(csv_path);
    if (!out)
      throw trsvr::InputError("cannot write metrics file '" +
                              csv_path.string() + "'");
    trsvr::write_metrics_csv(out, trace);
  }
  std::cout << "rows=" << trace.records.size()
            << " final_f=" << trsvr::format_g17(trace.final_f)
            << " final_grad_norm=" << trsvr::format_g17(trace.final_grad_norm)
            << " evals=" << trace.total_evals
            << " wall_seconds=" << trsvr::format_g17(trace.wall_seconds)
            << " stop=" << trace.stop_reason << " metrics=" << csv_path.string()
            << '\n';
  return 0;
}

void print_schedule(const std::string& prefix,
                    const trsvr::LyapunovSchedule& sched) {
  for (std::size_t i = 0; i < sched.lambda.size(); ++i)
    std::cout << prefix << "lambda[" << i
              << "] = " << trsvr::format_g17(sched.lambda[i]) << '\n';
  for (std::size_t i = 0; i < sched.Lambda.size(); ++i)
    std::cout << prefix << "Lambda[" << i
              << "] = " << trsvr::format_g17(sched.Lambda[i]) << '\n';
  std::cout << prefix
            << "Lambda_min = " << trsvr::format_g17(sched.Lambda_min) << '\n';
}

int cmd_constants(const CommonArgs& args) {
  const auto cfg = load_with_overrides(args);
  const auto problem = trsvr::build_problem(cfg.problem);
  const auto constants = trsvr::resolve_theory_constants(cfg, problem);

  std::cout << "problem = " << problem.name << '\n'
            << "n = " << problem.num_components << '\n'
            << "d = " << problem.dimension << '\n'
            << "grad_lipschitz = " << trsvr::format_g17(constants.grad_lipschitz)
            << '\n'
            << "hessian_bound = " << trsvr::format_g17(constants.hessian_bound)
            << '\n'
            << "approx_bound = "
            << trsvr::format_g17(constants.hessian_approx_bound) << '\n'
            << "component_lipschitz = "
            << trsvr::format_g17(constants.component_lipschitz) << '\n'
            << "sigma_g = " << trsvr::format_g17(constants.sigma_g) << '\n'
            << "f_lower_bound = " << trsvr::format_g17(constants.f_lower_bound)
            << '\n'
            << "closed_form = " << (constants.closed_form ? "true" : "false")
            << '\n'
            << "alpha = " << trsvr::format_g17(constants.alpha) << '\n'
            << "alpha_cap = " << trsvr::format_g17(constants.alpha_cap()) << '\n'
            << "alpha_hypothesis_ok = "
            << (constants.alpha_hypothesis_ok() ? "true" : "false") << '\n'
            << "batch_size = " << constants.batch_size << '\n'
            << "inner_iters = " << constants.inner_iters << '\n'
            << "z = " << trsvr::format_g17(constants.z) << '\n';

  const auto sched = trsvr::lyapunov_schedule(constants);
  print_schedule("", sched);

  const int outer_index_max = cfg.optimizer.outer_iters - 1;
  const auto rc = trsvr::make_run_config(cfg);
  const trsvr::Vector x0 = rc.x0.size() > 0
                               ? rc.x0
                               : trsvr::Vector::Zero(problem.dimension);
  const double f0 = trsvr::evaluate_objective(problem, x0);
  if (sched.meaningful()) {
    std::cout << "bound = "
              << trsvr::format_g17(trsvr::convergence_bound(
                     f0, constants.f_lower_bound, outer_index_max,
                     constants.inner_iters, sched.Lambda_min))
              << '\n';
  } else {
    std::cout << "bound = nan\n";
  }

  if (cfg.theory.z_grid) {
    const auto best = trsvr::search_z(constants);
    std::cout << "z_best = " << trsvr::format_g17(best.z) << '\n'
              << "Lambda_min_best = "
              << trsvr::format_g17(best.schedule.Lambda_min) << '\n';
    if (best.schedule.meaningful())
      std::cout << "bound_best_z = "
                << trsvr::format_g17(trsvr::convergence_bound(
                       f0, constants.f_lower_bound, outer_index_max,
                       constants.inner_iters, best.schedule.Lambda_min))
                << '\n';
    else
      std::cout << "bound_best_z = nan\n";
  }
  return 0;
}

std::vector<std::pair<trsvr::Vector, trsvr::Vector>> random_pairs(
    const trsvr::FiniteSumProblem& problem, int count, std::uint64_t seed) {
  std::vector<std::pair<trsvr::Vector, trsvr::Vector>> pairs;
  auto rng = trsvr::RandomSource{seed}.stream(1, 0, trsvr::kPointSalt);
  const double scales[] = {0.1, 0.5, 1.0};
  for (int i = 0; i < count; ++i) {
    trsvr::Vector x0(problem.dimension);
    for (int j = 0; j < problem.dimension; ++j) x0[j] = rng.normal();
    trsvr::Vector xs = x0;
    if (i > 0) {  // keep one coincident pair as the degenerate case
      const double scale = scales[i % 3];
      for (int j = 0; j < problem.dimension; ++j)
        xs[j] += scale * rng.normal();
    }
    pairs.emplace_back(std::move(xs), std::move(x0));
  }
  return pairs;
}

int cmd_verify(const CommonArgs& args, const std::string& which) {
  const auto cfg = load_with_overrides(args);
  const auto problem = trsvr::build_problem(cfg.problem);
  const auto constants = trsvr::resolve_theory_constants(cfg, problem);
  const auto rc = trsvr::make_run_config(cfg);
  const bool all = which == "all";
  trsvr::Report report;

  if (all || which == "variance") {
    trsvr::VarianceCheckMode mode;
    if (cfg.theory.variance_mode == "exact")
      mode = trsvr::VarianceCheckMode::exact_enumeration;
    else if (cfg.theory.variance_mode == "monte_carlo")
      mode = trsvr::VarianceCheckMode::monte_carlo;
    else
      throw trsvr::InputError("theory.variance_mode: unknown mode '" +
                              cfg.theory.variance_mode + "'");
    const auto pairs = random_pairs(problem, cfg.theory.pairs, rc.seed);
    auto sub = trsvr::verify_variance_bound(problem, constants, pairs, mode,
                                            cfg.theory.mc_trials,
                                            trsvr::RandomSource{rc.seed});
    report.lines.insert(report.lines.end(), sub.lines.begin(), sub.lines.end());
  }

  if (all || which == "decrease") {
    require_tr_algorithm(rc, "verify decrease");
    trsvr::RunConfig run_rc = rc;
    run_rc.diag_every = 1;
    const long long total_steps =
        static_cast<long long>(run_rc.outer_iters) * run_rc.inner_iters;
    run_rc.snapshot_every = static_cast<int>(std::max(
        1LL, total_steps / std::max(1, cfg.theory.replay_states)));
    const trsvr::Trace trace = run_rc.optimizer == trsvr::OptimizerKind::trsvr
                                   ? trsvr::run_trsvr(problem, run_rc)
                                   : trsvr::run_tr_deterministic(problem, run_rc);
    trsvr::DecreaseCheckOptions opts;
    opts.replay_trials = cfg.theory.replay_trials;
    opts.max_states = cfg.theory.replay_states;
    opts.replay_seed = rc.seed;
    auto sub = trsvr::verify_decrease_lemmas(trace, problem, constants, opts);
    report.lines.insert(report.lines.end(), sub.lines.begin(), sub.lines.end());
  }

  if (all || which == "theorem") {
    require_tr_algorithm(rc, "verify theorem");
    trsvr::TheoryConstants c = constants;
    trsvr::LyapunovSchedule sched;
    if (cfg.theory.z_grid) {
      auto best = trsvr::search_z(c);
      c.z = best.z;
      sched = std::move(best.schedule);
    } else {
      sched = trsvr::lyapunov_schedule(c);
    }
    report.lines.push_back({"theorem.z", trsvr::CheckStatus::pass, c.z,
                            sched.Lambda_min, ""});
    if (!sched.meaningful()) {
      report.skip("theorem.bound", "bound_vacuous_Lambda_min=" +
                                       trsvr::format_g17(sched.Lambda_min));
    } else {
      std::vector<int> k_list = cfg.theory.k_list;
      if (k_list.empty()) k_list.push_back(rc.outer_iters - 1);
      std::vector<double> per_k_mean;
      for (const int k_max : k_list) {
        if (k_max < 0)
          throw trsvr::InputError("theory.k_list entries must be >= 0");
        trsvr::RunConfig run_rc = rc;
        run_rc.outer_iters = k_max + 1;
        run_rc.diag_every = 1;
        run_rc.stop = {};  // the bound averages the full (K+1)*S iterations
        std::vector<trsvr::Trace> traces;
        traces.reserve(cfg.theory.seeds);
        for (int r = 0; r < std::max(1, cfg.theory.seeds); ++r) {
          run_rc.seed = rc.seed + static_cast<std::uint64_t>(r);
          traces.push_back(run_rc.optimizer == trsvr::OptimizerKind::trsvr
                               ? trsvr::run_trsvr(problem, run_rc)
                               : trsvr::run_tr_deterministic(problem, run_rc));
        }
        auto sub = trsvr::verify_theorem_bound(traces, c, sched);
        report.lines.insert(report.lines.end(), sub.lines.begin(),
                            sub.lines.end());
        double acc = 0.0;
        for (const auto& t : traces) {
          double a = 0.0;
          for (const auto& r : t.records) a += r.grad_norm * r.grad_norm;
          acc += a / t.records.size();
        }
        per_k_mean.push_back(acc / traces.size());
      }
      if (per_k_mean.size() >= 2)
        report.add("theorem.monotone",
                   per_k_mean.back() <= per_k_mean.front() * (1.0 + 1e-9),
                   per_k_mean.back(), per_k_mean.front());
    }
  }

  const fs::path dir = prepare_output_dir(cfg);
  const fs::path report_path = dir / cfg.output.report;
  {
    std::ofstream out(report_path);
    if (!out)
      throw trsvr::InputError("cannot write report file '" +
                              report_path.string() + "'");
    trsvr::write_report(out, report);
  }
  trsvr::write_report(std::cout, report);
  std::cout << "report=" << report_path.string() << '\n';
  return report.all_ok() ? 0 : 3;
}

int cmd_compare(std::vector<std::string> config_paths,
                const std::string& optimizers_csv,
                const std::vector<std::string>& overrides,
                std::string out_dir) {
  std::vector<std::pair<std::string, trsvr::ExperimentConfig>> runs;
  std::vector<trsvr::ExperimentConfig> bases;
  for (const auto& path : config_paths) {
    trsvr::ExperimentConfig cfg = trsvr::load_config(path);
    for (const auto& spec : overrides) trsvr::apply_override(cfg, spec);
    bases.push_back(std::move(cfg));
  }
  if (bases.empty()) throw trsvr::InputError("compare: need --config");

  if (!optimizers_csv.empty() || config_paths.size() < 2) {
    // Optimizer sweep over the first config.
    std::vector<std::string> names;
    std::stringstream ss(optimizers_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) names.push_back(item);
    if (names.empty())
      throw trsvr::InputError(
          "compare: give at least two --config files or a non-empty "
          "--optimizers list");
    for (const auto& name : names) {
      trsvr::ExperimentConfig cfg = bases.front();
      cfg.optimizer.algorithm = name;
      runs.emplace_back(name, std::move(cfg));
    }
  } else {
    for (std::size_t i = 0; i < bases.size(); ++i) {
      std::string label = bases[i].output.label.empty()
                              ? bases[i].optimizer.algorithm + "_" +
                                    std::to_string(i)
                              : bases[i].output.label;
      runs.emplace_back(std::move(label), bases[i]);
    }
  }
  if (runs.size() < 2)
    throw trsvr::InputError("compare: need at least two runs");

  const std::string sig = problem_signature(runs.front().second);
  for (const auto& [label, cfg] : runs)
    if (problem_signature(cfg) != sig)
      throw trsvr::InputError(
          "compare: runs configure different problems; series would not be "
          "comparable");

  if (out_dir.empty()) out_dir = runs.front().second.output.dir;
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);

  std::ofstream index(dir / "index.txt");
  if (!index)
    throw trsvr::InputError("compare: cannot write index in '" + out_dir + "'");
  for (const auto& [label, cfg] : runs) {
    const auto problem = trsvr::build_problem(cfg.problem);
    const auto rc = trsvr::make_run_config(cfg);
    const trsvr::Trace trace = trsvr::run_optimizer(problem, rc);
    const fs::path f_path = dir / (label + ".f.dat");
    const fs::path g_path = dir / (label + ".gradsq.dat");
    {
      std::ofstream out(f_path);
      trsvr::write_series(out, trace, trsvr::SeriesMetric::objective);
    }
    {
      std::ofstream out(g_path);
      trsvr::write_series(out, trace, trsvr::SeriesMetric::grad_norm_sq);
    }
    index << label << " f " << f_path.string() << '\n';
    index << label << " gradsq " << g_path.string() << '\n';
    std::cout << "run " << label
              << ": final_f=" << trsvr::format_g17(trace.final_f)
              << " evals=" << trace.total_evals << '\n';
  }
  std::cout << "index=" << (dir / "index.txt").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Finite-sum trust-region optimization benchmark and theory checker"};
  app.require_subcommand(1);

  CommonArgs run_args, verify_args, constants_args;
  std::string verify_which = "all";

  auto* run = app.add_subcommand("run", "Run an optimizer and write metrics");
  run->add_option("--config", run_args.config_path, "Config file")->required();
  run->add_option("--set", run_args.overrides, "Override section.key=value");

  auto* verify = app.add_subcommand("verify", "Run the theory verifiers");
  verify->add_option("--config", verify_args.config_path, "Config file")
      ->required();
  verify->add_option("--set", verify_args.overrides,
                     "Override section.key=value");
  verify
      ->add_option("--which", verify_which,
                   "variance | decrease | theorem | all")
      ->check(CLI::IsMember({"variance", "decrease", "theorem", "all"}));

  auto* constants =
      app.add_subcommand("constants", "Print analysis constants and schedule");
  constants->add_option("--config", constants_args.config_path, "Config file")
      ->required();
  constants->add_option("--set", constants_args.overrides,
                        "Override section.key=value");

  std::vector<std::string> compare_configs;
  std::vector<std::string> compare_sets;
  std::string compare_optimizers;
  std::string compare_out;
  auto* compare =
      app.add_subcommand("compare", "Run several optimizers, emit plot series");
  compare->add_option("--config", compare_configs, "Config file(s)")
      ->required();
  compare->add_option("--set", compare_sets, "Override section.key=value");
  compare->add_option("--optimizers", compare_optimizers,
                      "Comma-separated optimizer sweep over the first config");
  compare->add_option("--out", compare_out, "Output directory for series");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(run)) return cmd_run(run_args);
    if (app.got_subcommand(verify)) return cmd_verify(verify_args, verify_which);
    if (app.got_subcommand(constants)) return cmd_constants(constants_args);
    if (app.got_subcommand(compare))
      return cmd_compare(compare_configs, compare_optimizers, compare_sets,
                         compare_out);
  } catch (const trsvr::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const trsvr::VerificationError& e) {
    std::cerr << "verification failure: " << e.what() << '\n';
    return 3;
  } catch (const trsvr::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const trsvr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
