#pragma once

// Finite-sum problem abstraction, iterate state, and the deterministic
// randomness contract shared by all other modules.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "trsvr/errors.hpp"

namespace trsvr {

using Vector = Eigen::VectorXd;

// 17 significant digits round-trip any double exactly through text.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Deterministic randomness
//
// Every random decision is a pure function of (seed, stream coordinates):
// rerunning with the same seed reproduces the identical iterate sequence.
// Integer draws avoid std::uniform_int_distribution, whose output the
// standard leaves unspecified; the mt19937_64 engine itself is fully pinned.

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
            std::uint64_t salt = 0)
      : engine_(derive_state(seed, a, b, salt)) {}

  std::uint64_t next() { return engine_(); }

  // Unbiased draw from {0, ..., n-1} by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InputError("StreamRng::below requires n >= 1");
    const std::uint64_t min_accept = (0 - n) % n;  // 2^64 mod n
    std::uint64_t r = next();
    while (r < min_accept) r = next();
    return r % n;
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    const double u = 1.0 - uniform01();  // (0, 1]
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(two_pi * v);
    have_spare_ = true;
    return r * std::cos(two_pi * v);
  }

 private:
  static std::uint64_t derive_state(std::uint64_t seed, std::uint64_t a,
                                    std::uint64_t b, std::uint64_t salt) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ mix64(a));
    h = mix64(h ^ mix64(b));
    h = mix64(h ^ mix64(salt));
    return h;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Root of all randomness. stream(k, s) hands out an independent generator per
// iteration coordinate, so batch selection at (k, s) depends only on
// (seed, k, s) and never on how many draws earlier iterations consumed.
struct RandomSource {
  std::uint64_t seed = 0;

  StreamRng stream(std::uint64_t k, std::uint64_t s,
                   std::uint64_t salt = 0) const {
    return StreamRng(seed, k, s, salt);
  }
};

// Stream salts keep unrelated consumers of the same seed independent.
inline constexpr std::uint64_t kBatchSalt = 0x01;
inline constexpr std::uint64_t kSynthSalt = 0x02;
inline constexpr std::uint64_t kTrialSalt = 0x03;
inline constexpr std::uint64_t kReplaySalt = 0x04;
inline constexpr std::uint64_t kPointSalt = 0x05;

// ---------------------------------------------------------------------------
// Problem abstraction

// Constants known in closed form for the built-in problems; consumed by the
// convergence-theory calculator and by model building.
struct ClosedFormConstants {
  double grad_lipschitz = 0.0;       // Lipschitz constant of the mean gradient
  double hessian_bound = 0.0;        // uniform bound on the mean Hessian norm
  double component_lipschitz = 0.0;  // max over components of the gradient Lipschitz constant
  double f_lower_bound = 0.0;        // valid lower bound on f
};

// f(x) = (1/N) sum_i f_i(x). Components are deterministic functions of
// (i, x); instances are immutable after construction and safe to share.
struct FiniteSumProblem {
  int num_components = 0;  // N
  int dimension = 0;       // d
  std::string name;
  std::function<double(int, const Vector&)> component_value;
  std::function<Vector(int, const Vector&)> component_gradient;
  // Hessian-vector product of the full objective; empty when unavailable.
  std::function<Vector(const Vector&, const Vector&)> hessian_vector_product;
  std::optional<ClosedFormConstants> constants;

  bool has_hvp() const { return static_cast<bool>(hessian_vector_product); }
};

inline void check_dimension(const FiniteSumProblem& p, const Vector& x,
                            const char* where) {
  if (p.num_components < 1 || p.dimension < 1)
    throw InputError(std::string(where) +
                     ": problem needs at least one component and dimension 1");
  if (x.size() != p.dimension)
    throw InputError(std::string(where) + ": point has dimension " +
                     std::to_string(x.size()) + ", problem expects " +
                     std::to_string(p.dimension));
}

// Mean of the component values, accumulated in ascending index order so runs
// are bit-reproducible.
inline double evaluate_objective(const FiniteSumProblem& p, const Vector& x) {
  check_dimension(p, x, "evaluate_objective");
  double sum = 0.0;
  for (int i = 0; i < p.num_components; ++i) {
    const double v = p.component_value(i, x);
    if (!std::isfinite(v))
      throw NumericError("evaluate_objective: non-finite value from component " +
                         std::to_string(i) + " of problem '" + p.name + "'");
    sum += v;
  }
  return sum / p.num_components;
}

// Mean of the component gradients, same reduction order as the objective.
inline Vector full_gradient(const FiniteSumProblem& p, const Vector& x) {
  check_dimension(p, x, "full_gradient");
  Vector g = Vector::Zero(p.dimension);
  for (int i = 0; i < p.num_components; ++i) {
    const Vector gi = p.component_gradient(i, x);
    if (gi.size() != p.dimension)
      throw ContractError("full_gradient: component " + std::to_string(i) +
                          " returned a gradient of wrong dimension");
    if (!gi.allFinite())
      throw NumericError("full_gradient: non-finite entry from component " +
                         std::to_string(i) + " of problem '" + p.name + "'");
    g += gi;
  }
  g /= p.num_components;
  return g;
}

// ---------------------------------------------------------------------------
// Iterate state

// FNV-1a over the raw bytes; detects stale cached gradients cheaply.
inline std::uint64_t vector_fingerprint(const Vector& v) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  const std::size_t n = static_cast<std::size_t>(v.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

// Two-loop iterate: current point, the anchor where the full gradient was
// last computed, and the cached anchor gradient. Owned and mutated by a
// single driver; at inner index 0 the point equals the anchor exactly.
struct IterateState {
  int outer = 0;  // k
  int inner = 0;  // s
  Vector x;
  Vector anchor;
  Vector anchor_full_gradient;
  double radius = 0.0;
  std::uint64_t anchor_stamp = 0;

  // Starts a new outer loop at `point`: caches the full gradient and resets
  // the inner index. The stamp ties the cached gradient to the anchor bytes.
  void refresh_anchor(const FiniteSumProblem& p, Vector point) {
    anchor = std::move(point);
    anchor_full_gradient = full_gradient(p, anchor);
    anchor_stamp = vector_fingerprint(anchor);
    x = anchor;
    inner = 0;
  }

  bool anchor_gradient_current() const {
    return anchor.size() > 0 && anchor_stamp == vector_fingerprint(anchor);
  }
};

// ---------------------------------------------------------------------------
// Spectral-norm estimation

// Power iteration lower estimate of the spectral norm of a symmetric
// operator. For symmetric maps the ratio sequence is nondecreasing, so more
// steps never report less; callers that need a certified upper bound must
// combine this with problem-specific knowledge.
inline double power_iteration_norm(
    const std::function<Vector(const Vector&)>& op, int dim, int steps = 50,
    const Vector* start = nullptr) {
  if (dim <= 0) return 0.0;
  Vector v(dim);
  if (start != nullptr && start->size() == dim && start->norm() > 0.0 &&
      start->allFinite()) {
    v = *start / start->norm();
  } else {
    for (int i = 0; i < dim; ++i)
      v[i] = 1.0 + 0.5 * static_cast<double>(i) / std::max(1, dim);
    v /= v.norm();
  }
  double estimate = 0.0;
  for (int j = 0; j < steps; ++j) {
    Vector w = op(v);
    if (!w.allFinite())
      throw NumericError("power_iteration_norm: operator produced non-finite values");
    const double wn = w.norm();
    if (!(wn > 0.0)) break;  // hit the null space; estimate so far stands
    estimate = wn;           // ||A v|| with ||v|| = 1
    v = w / wn;
  }
  return estimate;
}

}  // namespace trsvr
