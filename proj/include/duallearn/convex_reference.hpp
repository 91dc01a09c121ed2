#pragma once

#include <Eigen/Core>

#include "duallearn/dual_solver.hpp"
#include "duallearn/models.hpp"
#include "duallearn/problem.hpp"

namespace duallearn {

/// True when the parametrized dual can be computed exactly: linear family,
/// real outputs, and losses that are convex quadratics or affine in the
/// outputs.
bool supports_exact_reference(const Problem& problem, const ParamModel& family);

struct ExactDualPoint {
  double value = 0.0;
  Eigen::VectorXd grad;  // slacks at the minimizer
  Eigen::MatrixXd hess;
  ParamModel model;      // a Lagrangian minimizer in the family
};

/// Exact g_p(lambda) = min_theta L(f_theta, lambda) for a linear family.
ExactDualPoint exact_family_dual(const Problem& problem, const ParamModel& family, const Eigen::VectorXd& lambda,
                                 bool want_hessian = false);

struct ExactFamilySolution {
  Eigen::VectorXd lambda_star;
  ParamModel model;  // f_theta(lambda*)
  double primal_value = 0.0;
  double dual_value = 0.0;
  Eigen::VectorXd slacks;
  bool converged = false;
};

/// Solves the parametrized dual exactly on a linear family.
ExactFamilySolution solve_exact_family(const Problem& problem, const ParamModel& family,
                                       const DualAscentConfig& cfg = {});

}  // namespace duallearn
