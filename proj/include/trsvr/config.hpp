#pragma once

// Experiment configuration: a sectioned key-value file covering the problem,
// the optimizer, the theory verifiers, and output locations. Parsing is
// table-driven so parse ∘ serialize ∘ parse is the identity and unknown keys
// are rejected by name.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/errors.hpp"
#include "trsvr/problems.hpp"
#include "trsvr/theory.hpp"

namespace trsvr {

// ---------------------------------------------------------------------------
// Config structs

struct ProblemConfig {
  std::string kind = "least_squares";  // least_squares | logistic | robust_nonconvex
  std::string source = "synthetic";    // synthetic | libsvm
  std::string path;                    // LIBSVM file for source = libsvm
  int n = 100;
  int d = 10;
  std::string synth = "gaussian_ls";  // gaussian_ls | separable_logistic
  double noise = 0.0;
  double reg = 0.0;
  std::uint64_t data_seed = 1;
  int feature_dim = 0;  // 0 infers from the data
};

struct OptimizerConfig {
  std::string algorithm = "trsvr";  // trsvr | sgd | svrg | tr_deterministic
  int batch_size = 1;
  int inner_iters = 10;
  int outer_iters = 10;
  double alpha = 0.1;
  double eta1 = 10.0;
  double eta2 = 0.1;
  std::string radius_policy = "proportional";  // proportional | clipped
  std::string hessian = "exact_hvp";  // exact_hvp | identity_scaled | diagonal | lbfgs
  double identity_scale = 1.0;
  int lbfgs_memory = 5;
  double kh_cap = 0.0;
  std::string subproblem = "steihaug";  // cauchy | steihaug
  double cg_tol = 1e-8;
  int cg_max_iter = 0;
  std::string sampling = "without_replacement";  // | with_replacement
  std::uint64_t seed = 0;
  double delta0 = 1.0;
  bool delta0_first_step = false;
  double grad_tol = 0.0;
  long long eval_budget = 0;
  int diag_every = 1;
  int snapshot_every = 0;
  bool strict = false;
  bool warn_hypothesis = true;
  std::vector<double> x0;  // empty = zero vector
};

struct TheoryConfig {
  double z = 1.0;
  bool z_grid = true;
  int pairs = 50;
  std::string variance_mode = "exact";  // exact | monte_carlo
  int mc_trials = 100000;
  int replay_trials = 1000;
  int replay_states = 10;
  int seeds = 20;
  std::vector<int> k_list;  // outer-index values for the theorem check
  // Constant overrides; unset values are estimated from the problem.
  std::optional<double> grad_lipschitz;
  std::optional<double> hessian_bound;
  std::optional<double> approx_bound;
  std::optional<double> component_lipschitz;
  std::optional<double> sigma_g;
  std::optional<double> f_lower_bound;
};

inline std::string default_output_dir() {
  const char* env = std::getenv("TRSVR_OUTPUT_DIR");
  return env != nullptr && *env != '\0' ? std::string(env) : std::string(".");
}

struct OutputConfig {
  std::string dir = default_output_dir();
  std::string metrics = "metrics.csv";
  std::string report = "report.txt";
  std::string label;
};

struct ExperimentConfig {
  ProblemConfig problem;
  OptimizerConfig optimizer;
  TheoryConfig theory;
  OutputConfig output;
};

// ---------------------------------------------------------------------------
// Value parsing helpers

namespace cfgdetail {

inline double to_double(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ParseError("config key " + key + ": expected a number, got '" + v + "'");
  return x;
}

inline long long to_i64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ParseError("config key " + key + ": expected an integer, got '" + v + "'");
  return x;
}

inline int to_int(const std::string& v, const std::string& key) {
  return static_cast<int>(to_i64(v, key));
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ParseError("config key " + key +
                     ": expected an unsigned integer, got '" + v + "'");
  return x;
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config key " + key + ": expected true/false, got '" + v + "'");
}

inline std::optional<double> to_opt(const std::string& v, const std::string& key) {
  if (v == "auto" || v.empty()) return std::nullopt;
  return to_double(v, key);
}

inline std::string from_opt(const std::optional<double>& v) {
  return v ? format_g17(*v) : "auto";
}

inline std::vector<double> to_double_list(const std::string& v,
                                          const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(to_double(item, key));
  return out;
}

inline std::vector<int> to_int_list(const std::string& v,
                                    const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(to_int(item, key));
  return out;
}

template <typename T>
inline std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    if constexpr (std::is_same_v<T, double>)
      out += format_g17(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

struct KeyBinding {
  std::string key;  // "section.name"
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    std::vector<KeyBinding> t;
    auto add = [&t](std::string key, auto setter, auto getter) {
      t.push_back({std::move(key), setter, getter});
    };
#define TRSVR_STR_KEY(key, field)                                          \
  add(key, [](ExperimentConfig& c, const std::string& v) { c.field = v; }, \
      [](const ExperimentConfig& c) { return c.field; })
#define TRSVR_NUM_KEY(key, field, conv)                    \
  add(key,                                                 \
      [](ExperimentConfig& c, const std::string& v) {      \
        c.field = conv(v, key);                            \
      },                                                   \
      [](const ExperimentConfig& c) {                      \
        return format_g17(static_cast<double>(c.field));   \
      })
#define TRSVR_INT_KEY(key, field, type, conv)              \
  add(key,                                                 \
      [](ExperimentConfig& c, const std::string& v) {      \
        c.field = static_cast<type>(conv(v, key));         \
      },                                                   \
      [](const ExperimentConfig& c) {                      \
        return std::to_string(c.field);                    \
      })
#define TRSVR_BOOL_KEY(key, field)                                     \
  add(key,                                                             \
      [](ExperimentConfig& c, const std::string& v) {                  \
        c.field = to_bool(v, key);                                     \
      },                                                               \
      [](const ExperimentConfig& c) { return c.field ? "true" : "false"; })
#define TRSVR_OPT_KEY(key, field)                                      \
  add(key,                                                             \
      [](ExperimentConfig& c, const std::string& v) {                  \
        c.field = to_opt(v, key);                                      \
      },                                                               \
      [](const ExperimentConfig& c) { return from_opt(c.field); })

    TRSVR_STR_KEY("problem.kind", problem.kind);
    TRSVR_STR_KEY("problem.source", problem.source);
    TRSVR_STR_KEY("problem.path", problem.path);
    TRSVR_INT_KEY("problem.n", problem.n, int, to_i64);
    TRSVR_INT_KEY("problem.d", problem.d, int, to_i64);
    TRSVR_STR_KEY("problem.synth", problem.synth);
    TRSVR_NUM_KEY("problem.noise", problem.noise, to_double);
    TRSVR_NUM_KEY("problem.reg", problem.reg, to_double);
    TRSVR_INT_KEY("problem.data_seed", problem.data_seed, std::uint64_t, to_u64);
    TRSVR_INT_KEY("problem.feature_dim", problem.feature_dim, int, to_i64);

    TRSVR_STR_KEY("optimizer.algorithm", optimizer.algorithm);
    TRSVR_INT_KEY("optimizer.batch_size", optimizer.batch_size, int, to_i64);
    TRSVR_INT_KEY("optimizer.inner_iters", optimizer.inner_iters, int, to_i64);
    TRSVR_INT_KEY("optimizer.outer_iters", optimizer.outer_iters, int, to_i64);
    TRSVR_NUM_KEY("optimizer.alpha", optimizer.alpha, to_double);
    TRSVR_NUM_KEY("optimizer.eta1", optimizer.eta1, to_double);
    TRSVR_NUM_KEY("optimizer.eta2", optimizer.eta2, to_double);
    TRSVR_STR_KEY("optimizer.radius_policy", optimizer.radius_policy);
    TRSVR_STR_KEY("optimizer.hessian", optimizer.hessian);
    TRSVR_NUM_KEY("optimizer.identity_scale", optimizer.identity_scale, to_double);
    TRSVR_INT_KEY("optimizer.lbfgs_memory", optimizer.lbfgs_memory, int, to_i64);
    TRSVR_NUM_KEY("optimizer.kh_cap", optimizer.kh_cap, to_double);
    TRSVR_STR_KEY("optimizer.subproblem", optimizer.subproblem);
    TRSVR_NUM_KEY("optimizer.cg_tol", optimizer.cg_tol, to_double);
    TRSVR_INT_KEY("optimizer.cg_max_iter", optimizer.cg_max_iter, int, to_i64);
    TRSVR_STR_KEY("optimizer.sampling", optimizer.sampling);
    TRSVR_INT_KEY("optimizer.seed", optimizer.seed, std::uint64_t, to_u64);
    TRSVR_NUM_KEY("optimizer.delta0", optimizer.delta0, to_double);
    TRSVR_BOOL_KEY("optimizer.delta0_first_step", optimizer.delta0_first_step);
    TRSVR_NUM_KEY("optimizer.grad_tol", optimizer.grad_tol, to_double);
    TRSVR_INT_KEY("optimizer.eval_budget", optimizer.eval_budget, long long, to_i64);
    TRSVR_INT_KEY("optimizer.diag_every", optimizer.diag_every, int, to_i64);
    TRSVR_INT_KEY("optimizer.snapshot_every", optimizer.snapshot_every, int, to_i64);
    TRSVR_BOOL_KEY("optimizer.strict", optimizer.strict);
    TRSVR_BOOL_KEY("optimizer.warn_hypothesis", optimizer.warn_hypothesis);
    add("optimizer.x0",
        [](ExperimentConfig& c, const std::string& v) {
          c.optimizer.x0 = to_double_list(v, "optimizer.x0");
        },
        [](const ExperimentConfig& c) { return join_list(c.optimizer.x0); });

    TRSVR_NUM_KEY("theory.z", theory.z, to_double);
    TRSVR_BOOL_KEY("theory.z_grid", theory.z_grid);
    TRSVR_INT_KEY("theory.pairs", theory.pairs, int, to_i64);
    TRSVR_STR_KEY("theory.variance_mode", theory.variance_mode);
    TRSVR_INT_KEY("theory.mc_trials", theory.mc_trials, int, to_i64);
    TRSVR_INT_KEY("theory.replay_trials", theory.replay_trials, int, to_i64);
    TRSVR_INT_KEY("theory.replay_states", theory.replay_states, int, to_i64);
    TRSVR_INT_KEY("theory.seeds", theory.seeds, int, to_i64);
    add("theory.k_list",
        [](ExperimentConfig& c, const std::string& v) {
          c.theory.k_list = to_int_list(v, "theory.k_list");
        },
        [](const ExperimentConfig& c) { return join_list(c.theory.k_list); });
    TRSVR_OPT_KEY("theory.grad_lipschitz", theory.grad_lipschitz);
    TRSVR_OPT_KEY("theory.hessian_bound", theory.hessian_bound);
    TRSVR_OPT_KEY("theory.approx_bound", theory.approx_bound);
    TRSVR_OPT_KEY("theory.component_lipschitz", theory.component_lipschitz);
    TRSVR_OPT_KEY("theory.sigma_g", theory.sigma_g);
    TRSVR_OPT_KEY("theory.f_lower_bound", theory.f_lower_bound);

    TRSVR_STR_KEY("output.dir", output.dir);
    TRSVR_STR_KEY("output.metrics", output.metrics);
    TRSVR_STR_KEY("output.report", output.report);
    TRSVR_STR_KEY("output.label", output.label);

#undef TRSVR_STR_KEY
#undef TRSVR_NUM_KEY
#undef TRSVR_INT_KEY
#undef TRSVR_BOOL_KEY
#undef TRSVR_OPT_KEY
    return t;
  }();
  return table;
}

inline const KeyBinding* find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return &b;
  return nullptr;
}

}  // namespace cfgdetail

// ---------------------------------------------------------------------------
// Parse / serialize

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = cfgdetail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("config line " + std::to_string(line_no) +
                         ": malformed section header '" + line + "'");
      section = cfgdetail::trim(line.substr(1, line.size() - 2));
      if (section != "problem" && section != "optimizer" &&
          section != "theory" && section != "output")
        throw ParseError("config line " + std::to_string(line_no) +
                         ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key = value, got '" + line + "'");
    if (section.empty())
      throw ParseError("config line " + std::to_string(line_no) +
                       ": key outside any section");
    const std::string key = section + "." + cfgdetail::trim(line.substr(0, eq));
    const std::string value = cfgdetail::trim(line.substr(eq + 1));
    const auto* binding = cfgdetail::find_binding(key);
    if (binding == nullptr)
      throw ParseError("config line " + std::to_string(line_no) +
                       ": unknown key " + key);
    binding->set(config, value);
  }
  return config;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

inline std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& binding : cfgdetail::bindings()) {
    const auto dot = binding.key.find('.');
    const std::string sec = binding.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += '\n';
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += binding.key.substr(dot + 1) + " = " + binding.get(config) + "\n";
  }
  return out;
}

// Applies a "section.key=value" override, as supplied by the CLI --set flag.
inline void apply_override(ExperimentConfig& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw InputError("override '" + spec + "': expected section.key=value");
  const std::string key = cfgdetail::trim(spec.substr(0, eq));
  const std::string value = cfgdetail::trim(spec.substr(eq + 1));
  const auto* binding = cfgdetail::find_binding(key);
  if (binding == nullptr) throw InputError("override: unknown key " + key);
  binding->set(config, value);
}

// ---------------------------------------------------------------------------
// Factories

inline FiniteSumProblem build_problem(const ProblemConfig& pc) {
  Dataset dataset;
  if (pc.source == "synthetic") {
    SynthKind kind;
    if (pc.synth == "gaussian_ls")
      kind = SynthKind::gaussian_ls;
    else if (pc.synth == "separable_logistic")
      kind = SynthKind::separable_logistic;
    else
      throw InputError("problem.synth: unknown kind '" + pc.synth + "'");
    dataset = synth_data(pc.data_seed, pc.n, pc.d, kind, pc.noise);
  } else if (pc.source == "libsvm") {
    std::ifstream in(pc.path);
    if (!in)
      throw InputError("problem.path: cannot open LIBSVM file '" + pc.path + "'");
    dataset = parse_libsvm(in, pc.feature_dim);
  } else {
    throw InputError("problem.source: unknown source '" + pc.source + "'");
  }

  if (pc.kind == "least_squares")
    return make_least_squares(std::move(dataset), pc.reg);
  if (pc.kind == "logistic") return make_logistic(std::move(dataset), pc.reg);
  if (pc.kind == "robust_nonconvex")
    return make_robust_nonconvex(std::move(dataset), pc.reg);
  throw InputError("problem.kind: unknown kind '" + pc.kind + "'");
}

namespace cfgdetail {

template <typename T>
inline T parse_enum(const std::string& value,
                    const std::vector<std::pair<std::string, T>>& table,
                    const std::string& key) {
  for (const auto& [name, v] : table)
    if (name == value) return v;
  std::string choices;
  for (const auto& [name, v] : table) {
    if (!choices.empty()) choices += " | ";
    choices += name;
  }
  throw InputError("config key " + key + ": '" + value + "' is not one of " +
                   choices);
}

}  // namespace cfgdetail

inline RunConfig make_run_config(const ExperimentConfig& config) {
  const auto& oc = config.optimizer;
  RunConfig rc;
  rc.optimizer = cfgdetail::parse_enum<OptimizerKind>(
      oc.algorithm,
      {{"trsvr", OptimizerKind::trsvr},
       {"sgd", OptimizerKind::sgd},
       {"svrg", OptimizerKind::svrg},
       {"tr_deterministic", OptimizerKind::tr_deterministic}},
      "optimizer.algorithm");
  rc.batch_size = oc.batch_size;
  rc.inner_iters = oc.inner_iters;
  rc.outer_iters = oc.outer_iters;
  rc.alpha = oc.alpha;
  rc.eta1 = oc.eta1;
  rc.eta2 = oc.eta2;
  rc.radius_mode = cfgdetail::parse_enum<RadiusMode>(
      oc.radius_policy,
      {{"proportional", RadiusMode::proportional},
       {"clipped", RadiusMode::clipped}},
      "optimizer.radius_policy");
  rc.hessian.mode = cfgdetail::parse_enum<HessianMode>(
      oc.hessian,
      {{"exact_hvp", HessianMode::exact_hvp},
       {"identity_scaled", HessianMode::identity_scaled},
       {"diagonal", HessianMode::diagonal},
       {"lbfgs", HessianMode::lbfgs}},
      "optimizer.hessian");
  rc.hessian.identity_scale = oc.identity_scale;
  rc.hessian.lbfgs_memory = oc.lbfgs_memory;
  rc.hessian.norm_cap = oc.kh_cap;
  rc.subproblem = cfgdetail::parse_enum<SubproblemSolver>(
      oc.subproblem,
      {{"cauchy", SubproblemSolver::cauchy},
       {"steihaug", SubproblemSolver::steihaug}},
      "optimizer.subproblem");
  rc.cg_tol = oc.cg_tol;
  rc.cg_max_iter = oc.cg_max_iter;
  rc.sampling = cfgdetail::parse_enum<SamplingMode>(
      oc.sampling,
      {{"without_replacement", SamplingMode::without_replacement},
       {"with_replacement", SamplingMode::with_replacement}},
      "optimizer.sampling");
  rc.seed = oc.seed;
  rc.delta0 = oc.delta0;
  rc.delta0_first_step = oc.delta0_first_step;
  rc.stop.grad_tol = oc.grad_tol;
  rc.stop.eval_budget = oc.eval_budget;
  rc.diag_every = oc.diag_every;
  rc.snapshot_every = oc.snapshot_every;
  rc.strict = oc.strict;
  rc.warn_hypothesis = oc.warn_hypothesis;
  if (!oc.x0.empty())
    rc.x0 = Eigen::Map<const Vector>(oc.x0.data(),
                                     static_cast<Eigen::Index>(oc.x0.size()));
  return rc;
}

// Constants for the theory commands: estimated from the problem at sampled
// points, the model bound resolved from the configured Hessian mode, then
// explicit [theory] overrides applied on top.
inline TheoryConstants resolve_theory_constants(const ExperimentConfig& config,
                                                const FiniteSumProblem& problem) {
  std::vector<Vector> points;
  auto rng = RandomSource{config.optimizer.seed}.stream(0, 0, kPointSalt);
  for (int i = 0; i < 8; ++i) {
    Vector p(problem.dimension);
    for (int j = 0; j < problem.dimension; ++j) p[j] = rng.normal();
    points.push_back(std::move(p));
  }
  TheoryConstants c = estimate_constants(problem, points);

  const auto& tc = config.theory;
  const RunConfig rc = make_run_config(config);
  switch (rc.hessian.mode) {
    case HessianMode::identity_scaled:
      c.hessian_approx_bound = std::abs(rc.hessian.identity_scale);
      break;
    case HessianMode::exact_hvp:
    case HessianMode::diagonal:
      c.hessian_approx_bound = c.hessian_bound;
      break;
    case HessianMode::lbfgs:
      if (!(rc.hessian.norm_cap > 0.0))
        throw InputError(
            "theory commands with optimizer.hessian = lbfgs require "
            "optimizer.kh_cap > 0 (no a-priori model norm bound otherwise)");
      c.hessian_approx_bound = rc.hessian.norm_cap;
      break;
  }
  if (rc.hessian.norm_cap > 0.0)
    c.hessian_approx_bound =
        std::min(c.hessian_approx_bound, rc.hessian.norm_cap);

  if (tc.grad_lipschitz) c.grad_lipschitz = *tc.grad_lipschitz;
  if (tc.hessian_bound) c.hessian_bound = *tc.hessian_bound;
  if (tc.approx_bound) c.hessian_approx_bound = *tc.approx_bound;
  if (tc.component_lipschitz) c.component_lipschitz = *tc.component_lipschitz;
  if (tc.sigma_g) c.sigma_g = *tc.sigma_g;
  if (tc.f_lower_bound) c.f_lower_bound = *tc.f_lower_bound;

  c.alpha = config.optimizer.alpha;
  c.z = tc.z;
  c.batch_size = config.optimizer.batch_size;
  c.inner_iters = config.optimizer.inner_iters;
  return c;
}

}  // namespace trsvr
