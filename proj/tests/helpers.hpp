#pragma once

// Shared test utilities: tiny hand-built problems, the finite-difference
// gradient oracle, and random model generation.

#include <functional>
#include <memory>
#include <vector>

#include "trsvr/core.hpp"
#include "trsvr/problems.hpp"

namespace test {

using trsvr::Vector;

// Central-difference gradient of the mean objective; the independent oracle
// for every gradient implementation in the library.
inline Vector fd_gradient(const trsvr::FiniteSumProblem& p, const Vector& x,
                          double h = 1e-6) {
  Vector g(p.dimension);
  Vector xp = x, xm = x;
  for (int i = 0; i < p.dimension; ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (trsvr::evaluate_objective(p, xp) -
            trsvr::evaluate_objective(p, xm)) /
           (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

// Central-difference gradient of a single component.
inline Vector fd_component_gradient(const trsvr::FiniteSumProblem& p, int i,
                                    const Vector& x, double h = 1e-6) {
  Vector g(p.dimension);
  Vector xp = x, xm = x;
  for (int j = 0; j < p.dimension; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    g[j] = (p.component_value(i, xp) - p.component_value(i, xm)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return g;
}

// Dense dataset from explicit rows.
inline trsvr::Dataset dense_dataset(const std::vector<std::vector<double>>& rows,
                                    const std::vector<double>& labels) {
  trsvr::Dataset ds;
  ds.feature_dim = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  for (const auto& r : rows) {
    trsvr::Dataset::Row row;
    for (int j = 0; j < static_cast<int>(r.size()); ++j)
      row.emplace_back(j, r[j]);
    ds.rows.push_back(std::move(row));
  }
  ds.labels = labels;
  return ds;
}

// Problem with component values c_i * x[0] (one-dimensional), used for the
// hand-computable mean examples.
inline trsvr::FiniteSumProblem linear_scalar_problem(std::vector<double> coeffs) {
  trsvr::FiniteSumProblem p;
  p.num_components = static_cast<int>(coeffs.size());
  p.dimension = 1;
  p.name = "linear_scalar";
  auto c = std::make_shared<std::vector<double>>(std::move(coeffs));
  p.component_value = [c](int i, const Vector& x) { return (*c)[i] * x[0]; };
  p.component_gradient = [c](int i, const Vector&) {
    Vector g(1);
    g[0] = (*c)[i];
    return g;
  };
  return p;
}

inline Vector random_vector(trsvr::StreamRng& rng, int d, double scale = 1.0) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace test
