#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "duallearn/models.hpp"
#include "duallearn/problem.hpp"
#include "duallearn/synthetic.hpp"

namespace duallearn::testing {

inline std::mt19937_64& rng_for(std::uint64_t seed) {
  static thread_local std::mt19937_64 rng;
  rng.seed(seed);
  return rng;
}

/// Small counterfactual fairness problem: cross-entropy objective and KL
/// pair constraints for the gender swap and the first race swaps.
inline Problem fairness_problem(std::uint64_t seed, int rows = 60, int swaps = 3, double level = 0.001) {
  CompasLikeConfig cfg;
  cfg.rows = rows;
  cfg.seed = seed;
  ProblemSpec spec;
  spec.samples = generate_compas_like(cfg);
  spec.schema = compas_schema();
  spec.output_dim = 2;
  spec.geometry = OutputGeometry::kSimplex;
  spec.objective = {LossKind::kCrossEntropy, 1.0, {}};
  const std::vector<Transform> tr = compas_transforms();
  for (int k = 0; k < swaps; ++k) {
    ConstraintSpec c;
    c.loss = {LossKind::kKlPair, 0.0, {}};
    c.transform = tr[static_cast<std::size_t>(k)];
    c.level = level;
    spec.constraints.push_back(c);
  }
  return Problem(std::move(spec));
}

/// Regression problem with a group mean-output cap on group 1 and a
/// squared-error cap on group 0.
inline Problem regression_problem(std::uint64_t seed, int rows = 30, int features = 2, double tau = 0.5,
                                  double mean_level = 0.5, double error_level = 0.6) {
  ProblemSpec spec;
  spec.samples = generate_regression(rows, features, seed);
  spec.schema = AttributeSchema{{"group"}, {2}};
  spec.output_dim = 1;
  spec.geometry = OutputGeometry::kReals;
  spec.objective = {LossKind::kSquaredError, tau, {}};
  ConstraintSpec mean;
  mean.loss = {LossKind::kMeanOutput, 0.0, {}};
  mean.level = mean_level;
  mean.group = GroupFilter{0, 1};
  ConstraintSpec err;
  err.loss = {LossKind::kSquaredError, 0.0, {}};
  err.level = error_level;
  err.group = GroupFilter{0, 0};
  spec.constraints = {mean, err};
  return Problem(std::move(spec));
}

/// One sample at x = 0 with y = 1: minimize (phi - 1)^2 subject to phi <= 0.
inline Problem closed_form_problem() {
  ProblemSpec spec;
  spec.samples = {Sample{Eigen::VectorXd::Zero(1), {}, 1.0, 1.0}};
  spec.objective = {LossKind::kSquaredError, 0.0, {}};
  ConstraintSpec c;
  c.loss = {LossKind::kMeanOutput, 0.0, {}};
  c.level = 0.0;
  spec.constraints = {c};
  return Problem(std::move(spec));
}

/// Random function table inside the output domain; simplex rows stay away
/// from the boundary.
inline FunctionTable random_table(const Problem& problem, std::mt19937_64& rng, double spread = 1.0) {
  const auto n = static_cast<Eigen::Index>(problem.num_points());
  const int K = problem.output_dim();
  FunctionTable phi(n, K);
  if (problem.geometry() == OutputGeometry::kSimplex) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (int k = 0; k < K; ++k) phi(j, k) = u(rng);
      phi.row(j) /= phi.row(j).sum();
    }
  } else {
    std::normal_distribution<double> g(0.0, spread);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (int k = 0; k < K; ++k) phi(j, k) = g(rng);
    }
  }
  return phi;
}

inline Eigen::VectorXd random_lambda(std::size_t m, std::mt19937_64& rng, double hi = 3.0) {
  std::uniform_real_distribution<double> u(0.0, hi);
  Eigen::VectorXd l(static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < l.size(); ++i) l[i] = u(rng);
  return l;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, std::max(a.norm(), b.norm()));
}

}  // namespace duallearn::testing
