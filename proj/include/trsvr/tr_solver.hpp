#pragma once

// Trust-region machinery: quadratic model construction with selectable
// Hessian approximations, subproblem solvers certified against the Cauchy
// decrease condition, and the radius update policies.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <utility>

#include "trsvr/core.hpp"
#include "trsvr/errors.hpp"
#include "trsvr/estimators.hpp"

namespace trsvr {

// Quadratic model m(p) = g.p + 1/2 p.H(p) trusted on the ball ||p|| <= radius.
// `norm_bound` is the certified bound on ||H|| used by decrease certificates;
// model builders guarantee it dominates the Rayleigh quotient along the model
// gradient, and cap-rescaling makes ||H|| <= cap hold by construction.
struct TrustRegionModel {
  Vector gradient;
  std::function<Vector(const Vector&)> hessian;
  double norm_bound = 0.0;
  double radius = 0.0;
};

struct Step {
  Vector direction;
  double model_decrease = 0.0;  // m(direction) - m(0), always <= 0
  bool on_boundary = false;
  bool truncated = false;  // iteration cap reached before a termination test
};

inline double model_value(const TrustRegionModel& m, const Vector& p) {
  return m.gradient.dot(p) + 0.5 * p.dot(m.hessian(p));
}

// ---------------------------------------------------------------------------
// Radius policies

enum class RadiusMode { proportional, clipped };

struct RadiusPolicy {
  RadiusMode mode = RadiusMode::proportional;
  double alpha = 0.1;
  double eta1 = 10.0;
  double eta2 = 0.1;

  static RadiusPolicy proportional(double alpha) {
    if (!(alpha > 0.0))
      throw InputError("RadiusPolicy: alpha must be positive");
    RadiusPolicy p;
    p.mode = RadiusMode::proportional;
    p.alpha = alpha;
    return p;
  }

  static RadiusPolicy clipped(double alpha, double eta1, double eta2) {
    if (!(alpha > 0.0))
      throw InputError("RadiusPolicy: alpha must be positive");
    if (!(eta1 > eta2) || !(eta2 > 0.0))
      throw InputError("RadiusPolicy: clipped mode requires eta1 > eta2 > 0");
    RadiusPolicy p;
    p.mode = RadiusMode::clipped;
    p.alpha = alpha;
    p.eta1 = eta1;
    p.eta2 = eta2;
    return p;
  }
};

// Radius for the current step, computed from the gradient-estimate norm
// before the subproblem is solved. The clipped rule assigns boundary ties to
// the middle case; all three cases agree there, so the policy is continuous.
inline double update_radius(const RadiusPolicy& policy, double grad_norm) {
  if (!(grad_norm >= 0.0))
    throw InputError("update_radius: gradient norm must be >= 0");
  if (policy.mode == RadiusMode::proportional) return policy.alpha * grad_norm;
  const double lo = 1.0 / policy.eta1;
  const double hi = 1.0 / policy.eta2;
  if (grad_norm < lo) return policy.eta1 * policy.alpha * grad_norm;
  if (grad_norm > hi) return policy.eta2 * policy.alpha * grad_norm;
  return policy.alpha;
}

// ---------------------------------------------------------------------------
// Subproblem solvers

// Best point along -g inside the ball. With t the step length,
// m(t) = -t ||g|| + 1/2 t^2 (g.Hg)/||g||^2, so the line minimizer is
// ||g||^3 / (g.Hg) when the curvature is positive and the boundary otherwise.
inline Step cauchy_step(const TrustRegionModel& m) {
  const Eigen::Index d = m.gradient.size();
  Step step;
  step.direction = Vector::Zero(d);
  if (!m.gradient.allFinite() || !std::isfinite(m.radius))
    throw NumericError("cauchy_step: non-finite model data");
  const double gnorm = m.gradient.norm();
  if (gnorm == 0.0 || m.radius <= 0.0) return step;
  const Vector hg = m.hessian(m.gradient);
  if (!hg.allFinite())
    throw NumericError("cauchy_step: non-finite Hessian-vector product");
  const double curvature = m.gradient.dot(hg);  // g.Hg
  double t = m.radius;
  bool boundary = true;
  if (curvature > 0.0) {
    const double t_line = gnorm * gnorm * gnorm / curvature;
    if (t_line < m.radius) {
      t = t_line;
      boundary = false;
    }
  }
  step.direction = (-t / gnorm) * m.gradient;
  step.model_decrease =
      -t * gnorm + 0.5 * t * t * curvature / (gnorm * gnorm);
  step.on_boundary = boundary;
  return step;
}

namespace detail {

// Positive root of ||p + tau d|| = radius, assuming ||p|| <= radius.
inline double boundary_intersection(const Vector& p, const Vector& dir,
                                    double radius) {
  const double dd = dir.squaredNorm();
  if (!(dd > 0.0)) return 0.0;
  const double pd = p.dot(dir);
  const double slack = std::max(0.0, radius * radius - p.squaredNorm());
  return (-pd + std::sqrt(pd * pd + dd * slack)) / dd;
}

}  // namespace detail

// Truncated conjugate gradients on the trust-region subproblem. Terminates on
// residual reduction below tol, boundary intersection, or negative curvature
// (stepping to the boundary along the current direction). The first iterate
// coincides with the Cauchy point and the model value never increases
// afterwards, so the Cauchy decrease certificate carries over.
inline Step steihaug_cg(const TrustRegionModel& m, double tol, int max_iter) {
  if (!(tol > 0.0)) throw InputError("steihaug_cg: tol must be positive");
  if (max_iter < 1) throw InputError("steihaug_cg: max_iter must be >= 1");
  const Eigen::Index d = m.gradient.size();
  Step step;
  step.direction = Vector::Zero(d);
  if (!m.gradient.allFinite() || !std::isfinite(m.radius))
    throw NumericError("steihaug_cg: non-finite model data");
  const double g0_sq = m.gradient.squaredNorm();
  if (g0_sq == 0.0 || m.radius <= 0.0) return step;
  const double stop_sq = tol * tol * g0_sq;

  Vector p = Vector::Zero(d);
  Vector r = m.gradient;  // residual of g + Hp
  Vector dir = -r;
  double rr = g0_sq;
  bool hit_boundary = false;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const Vector hd = m.hessian(dir);
    if (!hd.allFinite())
      throw NumericError("steihaug_cg: non-finite Hessian-vector product");
    const double dhd = dir.dot(hd);
    if (dhd <= 0.0) {
      p += detail::boundary_intersection(p, dir, m.radius) * dir;
      hit_boundary = true;
      break;
    }
    const double alpha = rr / dhd;
    const Vector p_next = p + alpha * dir;
    if (p_next.norm() >= m.radius) {
      p += detail::boundary_intersection(p, dir, m.radius) * dir;
      hit_boundary = true;
      break;
    }
    p = p_next;
    r += alpha * hd;
    const double rr_next = r.squaredNorm();
    if (rr_next <= stop_sq) {
      converged = true;
      break;
    }
    dir = -r + (rr_next / rr) * dir;
    rr = rr_next;
  }
  step.direction = p;
  step.model_decrease = model_value(m, p);
  step.on_boundary = hit_boundary;
  step.truncated = !hit_boundary && !converged;
  return step;
}

// Cauchy decrease condition with the model's certified norm bound:
// m(p) - m(0) <= -||g|| Delta + 1/2 ||H|| Delta^2, with 1e-10 absolute slack.
inline bool check_cauchy_decrease(const TrustRegionModel& m, const Step& step) {
  const double delta = m.radius;
  const double rhs =
      -m.gradient.norm() * delta + 0.5 * m.norm_bound * delta * delta;
  return step.model_decrease <= rhs + 1e-10;
}

// ---------------------------------------------------------------------------
// Hessian approximations

enum class HessianMode { exact_hvp, identity_scaled, diagonal, lbfgs };

struct HessianOptions {
  HessianMode mode = HessianMode::identity_scaled;
  double identity_scale = 1.0;
  int lbfgs_memory = 5;
  // When positive and the certified norm exceeds it, H is rescaled by
  // cap/estimate so ||H|| <= cap holds by construction.
  double norm_cap = 0.0;
  int norm_power_steps = 50;
};

// Limited-memory BFGS approximation in the direct (non-inverse) compact form
// B = B0 - [B0*S  Y] W^{-1} [S'B0; Y'] with B0 = gamma I (Byrd, Nocedal,
// Schnabel). Pairs failing the curvature test s.y > eps ||s|| ||y|| are
// dropped.
class LbfgsHistory {
 public:
  explicit LbfgsHistory(int memory = 5) : memory_(std::max(1, memory)) {}

  bool empty() const { return pairs_ == 0; }
  int size() const { return pairs_; }

  void clear() {
    s_.clear();
    y_.clear();
    pairs_ = 0;
    gamma_ = 1.0;
  }

  void push(const Vector& step, const Vector& grad_diff) {
    const double sy = step.dot(grad_diff);
    if (!(sy > 1e-12 * step.norm() * grad_diff.norm())) return;
    s_.push_back(step);
    y_.push_back(grad_diff);
    if (static_cast<int>(s_.size()) > memory_) {
      s_.pop_front();
      y_.pop_front();
    }
    gamma_ = grad_diff.squaredNorm() / sy;
    rebuild();
  }

  Vector apply(const Vector& v) const {
    if (pairs_ == 0) throw ContractError("LbfgsHistory::apply on empty history");
    Eigen::VectorXd rhs(2 * pairs_);
    rhs.head(pairs_) = gamma_ * (smat_.transpose() * v);
    rhs.tail(pairs_) = ymat_.transpose() * v;
    const Eigen::VectorXd coef = middle_lu_.solve(rhs);
    return gamma_ * v - gamma_ * (smat_ * coef.head(pairs_)) -
           ymat_ * coef.tail(pairs_);
  }

  double base_scale() const { return gamma_; }

 private:
  void rebuild() {
    const int m = static_cast<int>(s_.size());
    const Eigen::Index d = s_.front().size();
    smat_.resize(d, m);
    ymat_.resize(d, m);
    for (int j = 0; j < m; ++j) {
      smat_.col(j) = s_[j];
      ymat_.col(j) = y_[j];
    }
    Eigen::MatrixXd sty = smat_.transpose() * ymat_;
    Eigen::MatrixXd middle(2 * m, 2 * m);
    middle.topLeftCorner(m, m) = gamma_ * (smat_.transpose() * smat_);
    middle.topRightCorner(m, m) = sty.triangularView<Eigen::StrictlyLower>();
    middle.bottomLeftCorner(m, m) =
        middle.topRightCorner(m, m).transpose();
    middle.bottomRightCorner(m, m) =
        -sty.diagonal().asDiagonal().toDenseMatrix();
    middle_lu_.compute(middle);
    if (!middle_lu_.isInvertible()) {
      // Degenerate span; drop the oldest pair and retry, or reset entirely.
      s_.pop_front();
      y_.pop_front();
      if (s_.empty()) {
        clear();
        return;
      }
      rebuild();
      return;
    }
    pairs_ = m;
  }

  int memory_;
  std::deque<Vector> s_, y_;
  double gamma_ = 1.0;
  int pairs_ = 0;
  Eigen::MatrixXd smat_, ymat_;
  Eigen::FullPivLU<Eigen::MatrixXd> middle_lu_;
};

// Builds the quadratic model at the current iterate from a variance-reduced
// (or full) gradient estimate. The certified norm bound comes from the
// problem's closed-form Hessian bound when one exists, from the exact value
// for identity/diagonal operators, and otherwise from power iteration started
// along the model gradient (which dominates the Rayleigh quotient the Cauchy
// certificate needs).
inline TrustRegionModel build_model(const FiniteSumProblem& problem,
                                    const IterateState& state,
                                    const GradientEstimate& estimate,
                                    const HessianOptions& options,
                                    const LbfgsHistory* history = nullptr) {
  if (estimate.kind == EstimateKind::minibatch)
    throw InputError(
        "build_model: model gradient must be a variance-reduced or full "
        "estimate, not a raw mini-batch");
  TrustRegionModel model;
  model.gradient = estimate.value;
  model.radius = state.radius;
  const int d = problem.dimension;

  HessianMode mode = options.mode;
  if (mode == HessianMode::lbfgs && (history == nullptr || history->empty()))
    mode = HessianMode::identity_scaled;  // degenerate history falls back

  switch (mode) {
    case HessianMode::identity_scaled: {
      const double c = options.identity_scale;
      model.hessian = [c](const Vector& v) { return Vector(c * v); };
      model.norm_bound = std::abs(c);
      break;
    }
    case HessianMode::exact_hvp: {
      if (!problem.has_hvp())
        throw InputError(
            "build_model: hessian mode exact_hvp requires a problem with "
            "Hessian-vector products");
      const Vector x = state.x;
      auto hvp = problem.hessian_vector_product;
      model.hessian = [hvp, x](const Vector& v) { return hvp(x, v); };
      model.norm_bound =
          problem.constants
              ? problem.constants->hessian_bound
              : power_iteration_norm(model.hessian, d,
                                     options.norm_power_steps,
                                     &model.gradient);
      break;
    }
    case HessianMode::diagonal: {
      if (!problem.has_hvp())
        throw InputError(
            "build_model: hessian mode diagonal requires a problem with "
            "Hessian-vector products");
      Vector diag(d);
      Vector unit = Vector::Zero(d);
      for (int i = 0; i < d; ++i) {
        unit[i] = 1.0;
        diag[i] = problem.hessian_vector_product(state.x, unit)[i];
        unit[i] = 0.0;
      }
      model.hessian = [diag](const Vector& v) {
        return Vector(diag.cwiseProduct(v));
      };
      model.norm_bound = d > 0 ? diag.cwiseAbs().maxCoeff() : 0.0;
      break;
    }
    case HessianMode::lbfgs: {
      auto shared = std::make_shared<LbfgsHistory>(*history);
      model.hessian = [shared](const Vector& v) { return shared->apply(v); };
      model.norm_bound = power_iteration_norm(
          model.hessian, d, options.norm_power_steps, &model.gradient);
      break;
    }
  }

  if (options.norm_cap > 0.0 && model.norm_bound > options.norm_cap) {
    const double scale = options.norm_cap / model.norm_bound;
    auto base = model.hessian;
    model.hessian = [base, scale](const Vector& v) {
      return Vector(scale * base(v));
    };
    model.norm_bound = options.norm_cap;
  }
  return model;
}

}  // namespace trsvr
