#pragma once

#include <functional>
#include <string>

#include <Eigen/Core>

namespace duallearn {

struct DualPoint {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;  // filled only when requested; negative semidefinite
};

/// Evaluates a concave dual function. The flag asks for the Hessian.
using DualOracle = std::function<DualPoint(const Eigen::VectorXd& lambda, bool want_hessian)>;

struct DualAscentConfig {
  int max_iters = 500;
  double tol = 1e-10;  // on the projected-gradient residual
  double cap = 1e6;
  bool newton = true;
  double initial_step = 1.0;
};

struct DualAscentResult {
  Eigen::VectorXd lambda;
  double value = 0.0;
  Eigen::VectorXd grad;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool capped = false;
  std::string diagnostic;
};

/// ||lambda - max(0, lambda + grad)||_inf, zero exactly at a maximizer over
/// the nonnegative orthant.
double projected_residual(const Eigen::VectorXd& lambda, const Eigen::VectorXd& grad);

/// Maximizes a differentiable concave function over lambda >= 0 by
/// projected Newton steps on the free variables with an Armijo search along
/// the projection arc, falling back to projected gradient steps.
DualAscentResult maximize_concave_dual(const DualOracle& oracle, const Eigen::VectorXd& lambda0,
                                       const DualAscentConfig& cfg);

}  // namespace duallearn
