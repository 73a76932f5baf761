#pragma once

// Built-in benchmark objectives, synthetic data generation, and
// LIBSVM-format ingestion. The builders attach closed-form Lipschitz and
// lower-bound constants so the convergence-theory calculator can work
// without sampling.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/errors.hpp"

namespace trsvr {

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  // Sparse rows: (feature index, value) pairs with strictly increasing
  // indices in [0, feature_dim).
  using Row = std::vector<std::pair<int, double>>;

  std::vector<Row> rows;
  std::vector<double> labels;
  int feature_dim = 0;

  int size() const { return static_cast<int>(rows.size()); }

  bool operator==(const Dataset& other) const {
    return feature_dim == other.feature_dim && labels == other.labels &&
           rows == other.rows;
  }
};

inline double row_dot(const Dataset::Row& row, const Vector& x) {
  double acc = 0.0;
  for (const auto& [idx, val] : row) acc += val * x[idx];
  return acc;
}

inline void row_axpy(double c, const Dataset::Row& row, Vector& out) {
  for (const auto& [idx, val] : row) out[idx] += c * val;
}

inline double row_sq_norm(const Dataset::Row& row) {
  double acc = 0.0;
  for (const auto& [idx, val] : row) acc += val * val;
  return acc;
}

// ---------------------------------------------------------------------------
// LIBSVM format
//
// `<label> <index>:<value> <index>:<value> ...` with 1-based, strictly
// increasing indices; blank lines and `#` comment suffixes are ignored.

namespace detail {

inline double parse_double_token(const std::string& tok, int line_no,
                                 const char* what) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError("libsvm line " + std::to_string(line_no) +
                     ": non-numeric " + what + " '" + tok + "'");
  return v;
}

inline long parse_long_token(const std::string& tok, int line_no,
                             const char* what) {
  char* end = nullptr;
  const long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0')
    throw ParseError("libsvm line " + std::to_string(line_no) +
                     ": non-numeric " + what + " '" + tok + "'");
  return v;
}

}  // namespace detail

// Parses LIBSVM text into a Dataset with 0-based indices. feature_dim is the
// maximum index seen unless `feature_dim_override` > 0 forces a wider (never
// narrower) dimension.
inline Dataset parse_libsvm(std::istream& in, int feature_dim_override = 0) {
  Dataset ds;
  std::string line;
  int line_no = 0;
  int max_index = 0;  // 1-based
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line
    ds.labels.push_back(detail::parse_double_token(tok, line_no, "label"));
    Dataset::Row row;
    int prev_index = 0;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos)
        throw ParseError("libsvm line " + std::to_string(line_no) +
                         ": expected <index>:<value>, got '" + tok + "'");
      const long idx =
          detail::parse_long_token(tok.substr(0, colon), line_no, "index");
      const double val =
          detail::parse_double_token(tok.substr(colon + 1), line_no, "value");
      if (idx < 1)
        throw ParseError("libsvm line " + std::to_string(line_no) +
                         ": index " + std::to_string(idx) + " is below 1");
      if (idx <= prev_index)
        throw ParseError("libsvm line " + std::to_string(line_no) +
                         ": non-increasing feature index " +
                         std::to_string(idx));
      prev_index = static_cast<int>(idx);
      max_index = std::max(max_index, prev_index);
      row.emplace_back(prev_index - 1, val);
    }
    ds.rows.push_back(std::move(row));
  }
  if (feature_dim_override > 0 && feature_dim_override < max_index)
    throw ParseError("libsvm: feature_dim override " +
                     std::to_string(feature_dim_override) +
                     " is smaller than max index " + std::to_string(max_index));
  ds.feature_dim = feature_dim_override > 0 ? feature_dim_override : max_index;
  return ds;
}

// Inverse of parse_libsvm on datasets whose feature_dim equals the maximum
// stored index; values print with 17 significant digits so parse ∘ serialize
// is the identity.
inline void serialize_libsvm(const Dataset& ds, std::ostream& out) {
  for (int i = 0; i < ds.size(); ++i) {
    out << format_g17(ds.labels[i]);
    for (const auto& [idx, val] : ds.rows[i])
      out << ' ' << (idx + 1) << ':' << format_g17(val);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthKind { gaussian_ls, separable_logistic };

// Deterministic in `seed`. gaussian_ls draws standard-normal rows and labels
// y = a.x* + noise*eps for a hidden x*; separable_logistic labels by
// sign(a.x*) and flips each label with probability `noise`.
inline Dataset synth_data(std::uint64_t seed, int n, int d, SynthKind kind,
                          double noise) {
  if (n < 1 || d < 1)
    throw InputError("synth_data: need n >= 1 and d >= 1");
  if (noise < 0.0) throw InputError("synth_data: noise must be >= 0");
  RandomSource source{seed};
  auto rng = source.stream(0, 0, kSynthSalt);

  Vector hidden(d);
  for (int j = 0; j < d; ++j) hidden[j] = rng.normal();
  if (kind == SynthKind::separable_logistic) {
    const double hn = hidden.norm();
    if (hn > 0.0)
      hidden /= hn;
    else
      hidden[0] = 1.0;
  }

  Dataset ds;
  ds.feature_dim = d;
  ds.rows.reserve(n);
  ds.labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    Dataset::Row row;
    row.reserve(d);
    double margin = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = rng.normal();
      row.emplace_back(j, v);
      margin += v * hidden[j];
    }
    double label = 0.0;
    switch (kind) {
      case SynthKind::gaussian_ls:
        label = margin + noise * rng.normal();
        break;
      case SynthKind::separable_logistic:
        label = margin >= 0.0 ? 1.0 : -1.0;
        if (noise > 0.0 && rng.uniform01() < noise) label = -label;
        break;
    }
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(label);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Closed-form spectral quantities

namespace detail {

// lambda_max((1/N) sum_i a_i a_i^T). Dense eigensolve at desk scale for an
// exact value (the theory checks carry tight slacks); power iteration with a
// safety factor beyond that.
inline double dataset_gram_norm(const Dataset& ds) {
  const int d = ds.feature_dim;
  const int n = ds.size();
  if (d == 0 || n == 0) return 0.0;
  if (d <= 2048) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    for (const auto& row : ds.rows)
      for (const auto& [i, vi] : row)
        for (const auto& [j, vj] : row) gram(i, j) += vi * vj;
    gram /= n;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success)
      throw NumericError("dataset_gram_norm: eigensolver failed");
    return std::max(0.0, solver.eigenvalues().maxCoeff());
  }
  auto op = [&ds, d, n](const Vector& v) {
    Vector out = Vector::Zero(d);
    for (const auto& row : ds.rows) row_axpy(row_dot(row, v) / n, row, out);
    return out;
  };
  return 1.01 * power_iteration_norm(op, d, 1000);
}

inline double dataset_max_row_sq_norm(const Dataset& ds) {
  double m = 0.0;
  for (const auto& row : ds.rows) m = std::max(m, row_sq_norm(row));
  return m;
}

// Minimum of the regularized least-squares objective, solved from the normal
// equations; falls back to the always-valid bound 0 when the system is
// singular or too large for a dense solve.
inline double least_squares_lower_bound(const Dataset& ds, double reg) {
  const int d = ds.feature_dim;
  const int n = ds.size();
  if (d == 0 || n == 0 || d > 2048) return 0.0;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(d, d) * reg;
  Vector rhs = Vector::Zero(d);
  for (int r = 0; r < n; ++r) {
    for (const auto& [i, vi] : ds.rows[r]) {
      rhs[i] += vi * ds.labels[r] / n;
      for (const auto& [j, vj] : ds.rows[r]) gram(i, j) += vi * vj / n;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) return 0.0;
  const Vector sol = ldlt.solve(rhs);
  if (!sol.allFinite()) return 0.0;
  if ((gram * sol - rhs).norm() > 1e-8 * (rhs.norm() + 1.0)) return 0.0;
  double value = 0.5 * reg * sol.squaredNorm();
  for (int r = 0; r < n; ++r) {
    const double res = row_dot(ds.rows[r], sol) - ds.labels[r];
    value += 0.5 * res * res / n;
  }
  return value;
}

inline std::shared_ptr<const Dataset> share(Dataset ds) {
  return std::make_shared<const Dataset>(std::move(ds));
}

inline void require_nonempty(const Dataset& ds, const char* what) {
  if (ds.size() == 0) throw InputError(std::string(what) + ": empty dataset");
  if (ds.feature_dim < 1)
    throw InputError(std::string(what) + ": feature dimension must be >= 1");
}

// Numerically stable log(1 + exp(t)) and logistic sigmoid.
inline double softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Built-in objectives

// f_i(x) = 1/2 (a_i.x - y_i)^2 + reg/2 ||x||^2
inline FiniteSumProblem make_least_squares(Dataset dataset, double reg) {
  detail::require_nonempty(dataset, "make_least_squares");
  if (reg < 0.0) throw InputError("make_least_squares: reg must be >= 0");
  auto data = detail::share(std::move(dataset));
  const int n = data->size();
  const int d = data->feature_dim;

  ClosedFormConstants c;
  const double gram_norm = detail::dataset_gram_norm(*data);
  c.grad_lipschitz = gram_norm + reg;
  c.hessian_bound = c.grad_lipschitz;  // quadratic: constant Hessian
  c.component_lipschitz = detail::dataset_max_row_sq_norm(*data) + reg;
  c.f_lower_bound = detail::least_squares_lower_bound(*data, reg);

  FiniteSumProblem p;
  p.num_components = n;
  p.dimension = d;
  p.name = "least_squares";
  p.constants = c;
  p.component_value = [data, reg](int i, const Vector& x) {
    const double r = row_dot(data->rows[i], x) - data->labels[i];
    return 0.5 * r * r + 0.5 * reg * x.squaredNorm();
  };
  p.component_gradient = [data, reg](int i, const Vector& x) {
    Vector g = reg * x;
    const double r = row_dot(data->rows[i], x) - data->labels[i];
    row_axpy(r, data->rows[i], g);
    return g;
  };
  p.hessian_vector_product = [data, reg, n](const Vector&, const Vector& v) {
    Vector out = reg * v;
    for (const auto& row : data->rows) row_axpy(row_dot(row, v) / n, row, out);
    return out;
  };
  return p;
}

// f_i(x) = log(1 + exp(-y_i a_i.x)) + reg/2 ||x||^2, labels in {-1, +1}
inline FiniteSumProblem make_logistic(Dataset dataset, double reg) {
  detail::require_nonempty(dataset, "make_logistic");
  if (reg < 0.0) throw InputError("make_logistic: reg must be >= 0");
  for (int i = 0; i < dataset.size(); ++i)
    if (dataset.labels[i] != 1.0 && dataset.labels[i] != -1.0)
      throw InputError("make_logistic: label " +
                       format_g17(dataset.labels[i]) + " at row " +
                       std::to_string(i) + " is not in {-1, +1}");
  auto data = detail::share(std::move(dataset));
  const int n = data->size();
  const int d = data->feature_dim;

  // Per-sample curvature of the logistic loss is at most 1/4.
  ClosedFormConstants c;
  c.grad_lipschitz = 0.25 * detail::dataset_gram_norm(*data) + reg;
  c.hessian_bound = c.grad_lipschitz;
  c.component_lipschitz = 0.25 * detail::dataset_max_row_sq_norm(*data) + reg;
  c.f_lower_bound = 0.0;

  FiniteSumProblem p;
  p.num_components = n;
  p.dimension = d;
  p.name = "logistic";
  p.constants = c;
  p.component_value = [data, reg](int i, const Vector& x) {
    const double margin = data->labels[i] * row_dot(data->rows[i], x);
    return detail::softplus(-margin) + 0.5 * reg * x.squaredNorm();
  };
  p.component_gradient = [data, reg](int i, const Vector& x) {
    Vector g = reg * x;
    const double margin = data->labels[i] * row_dot(data->rows[i], x);
    row_axpy((detail::sigmoid(margin) - 1.0) * data->labels[i], data->rows[i], g);
    return g;
  };
  p.hessian_vector_product = [data, reg, n](const Vector& x, const Vector& v) {
    Vector out = reg * v;
    for (int i = 0; i < n; ++i) {
      const double s =
          detail::sigmoid(data->labels[i] * row_dot(data->rows[i], x));
      row_axpy(s * (1.0 - s) * row_dot(data->rows[i], v) / n, data->rows[i],
               out);
    }
    return out;
  };
  return p;
}

// f_i(x) = r^2/(1 + r^2) + reg/2 ||x||^2 with r = a_i.x - y_i. Smooth,
// bounded, nonconvex; the per-component loss lies in [0, 1) and the loss
// curvature rho''(r) = (2 - 6 r^2)/(1 + r^2)^3 lies in [-1/2, 2].
inline FiniteSumProblem make_robust_nonconvex(Dataset dataset, double reg) {
  detail::require_nonempty(dataset, "make_robust_nonconvex");
  if (reg < 0.0) throw InputError("make_robust_nonconvex: reg must be >= 0");
  auto data = detail::share(std::move(dataset));
  const int n = data->size();
  const int d = data->feature_dim;

  ClosedFormConstants c;
  c.grad_lipschitz = 2.0 * detail::dataset_gram_norm(*data) + reg;
  c.hessian_bound = c.grad_lipschitz;
  c.component_lipschitz = 2.0 * detail::dataset_max_row_sq_norm(*data) + reg;
  c.f_lower_bound = 0.0;

  FiniteSumProblem p;
  p.num_components = n;
  p.dimension = d;
  p.name = "robust_nonconvex";
  p.constants = c;
  p.component_value = [data, reg](int i, const Vector& x) {
    const double r = row_dot(data->rows[i], x) - data->labels[i];
    return r * r / (1.0 + r * r) + 0.5 * reg * x.squaredNorm();
  };
  p.component_gradient = [data, reg](int i, const Vector& x) {
    Vector g = reg * x;
    const double r = row_dot(data->rows[i], x) - data->labels[i];
    const double denom = 1.0 + r * r;
    row_axpy(2.0 * r / (denom * denom), data->rows[i], g);
    return g;
  };
  p.hessian_vector_product = [data, reg, n](const Vector& x, const Vector& v) {
    Vector out = reg * v;
    for (int i = 0; i < n; ++i) {
      const double r = row_dot(data->rows[i], x) - data->labels[i];
      const double denom = 1.0 + r * r;
      const double curv = (2.0 - 6.0 * r * r) / (denom * denom * denom);
      row_axpy(curv * row_dot(data->rows[i], v) / n, data->rows[i], out);
    }
    return out;
  };
  return p;
}

}  // namespace trsvr
