#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallearn/dual_solver.hpp"
#include "duallearn/problem.hpp"

namespace duallearn {

struct NewtonConfig {
  int max_iters = 100;
  double grad_tol = 1e-10;
};

struct MinimizerInfo {
  double max_grad = 0.0;  // largest block gradient norm at exit
  int max_iters_used = 0;
};

/// argmin of sum_i coef_i * raw_loss_i(phi) + delta * E_pi ||phi||^2 over
/// function tables, by damped Newton on each coupled block. Inactive points
/// are left at their neutral value.
FunctionTable minimize_weighted(const Problem& problem, const Eigen::VectorXd& coef, double delta = 0.0,
                                const FunctionTable* warm = nullptr, const NewtonConfig& cfg = {},
                                MinimizerInfo* info = nullptr);

/// The unique Lagrangian minimizer phi(lambda).
FunctionTable minimize_lagrangian_unparam(const Problem& problem, const Eigen::VectorXd& lambda,
                                          const FunctionTable* warm = nullptr);

struct DualValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  // slacks at phi(lambda)
};

DualValue dual_function_unparam(const Problem& problem, const Eigen::VectorXd& lambda);

/// g_u with gradient and Hessian -J H^{-1} J^T; optionally returns phi(lambda).
DualPoint dual_point_unparam(const Problem& problem, const Eigen::VectorXd& lambda, bool want_hessian,
                             FunctionTable* phi_out = nullptr, const FunctionTable* warm = nullptr);

struct UnparamConfig {
  DualAscentConfig ascent;
  bool slater_check = true;
  int slater_iters = 400;
};

struct UnparamSolution {
  Eigen::VectorXd lambda_star;
  FunctionTable phi_star;
  double dual_value = 0.0;
  double primal_value = 0.0;
  Eigen::VectorXd slacks;
  Eigen::VectorXd kkt_residuals;  // lambda_i * slack_i
  double duality_residual = 0.0;  // |P - D|
  double dual_residual = 0.0;     // projected-gradient optimality residual
  int iterations = 0;
  bool converged = false;
  bool capped = false;
  std::optional<Eigen::VectorXd> slater_witness_slacks;
  std::vector<std::string> diagnostics;
};

/// Strict-feasibility pre-solve: returns the slacks of a point with all
/// slacks negative, or throws InfeasibleError with the best multiplier.
Eigen::VectorXd find_slater_point(const Problem& problem, int max_iters = 400);

UnparamSolution solve_unparam_dual(const Problem& problem, const UnparamConfig& cfg = {});

struct PerturbationPoint {
  Eigen::VectorXd epsilon;
  double value = 0.0;
  bool feasible = false;
};

/// Optimal value of the problem with constraints l(phi) + eps <= 0.
PerturbationPoint perturbation_value(const Problem& problem, const Eigen::VectorXd& epsilon,
                                     const UnparamConfig& cfg = {});

struct FenchelReport {
  double max_residual = 0.0;
  std::vector<double> residuals;  // -g_u(lambda) - conjugate over the grid, per lambda
};

/// Discrete conjugate sup_eps [lambda^T eps - P*(eps)] over the grid compared
/// with -g_u(lambda). Grid values are always a lower bound, so residuals are
/// nonnegative up to solver tolerance.
FenchelReport fenchel_residual(const Problem& problem, const std::vector<Eigen::VectorXd>& lambda_grid,
                               const std::vector<Eigen::VectorXd>& epsilon_grid, const UnparamConfig& cfg = {});
FenchelReport fenchel_residual(const Problem& problem, const std::vector<Eigen::VectorXd>& lambda_grid,
                               const std::vector<PerturbationPoint>& perturbations);

}  // namespace duallearn
