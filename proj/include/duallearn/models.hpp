#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallearn/problem.hpp"

namespace duallearn {

enum class Arch { kLinear, kMlp2 };

const char* to_string(Arch arch);
Arch parse_arch(const std::string& name);

/// Parametrized hypothesis f_theta. Inputs pass through the optional frozen
/// projection first; under simplex geometry the network outputs logits and
/// the model reports softmax probabilities.
///
/// theta layout (column-major blocks):
///   linear: W (K x d), b (K)
///   mlp2:   W1 (H x d), b1 (H), W2 (K x H), b2 (K)
struct ParamModel {
  Arch arch = Arch::kLinear;
  int hidden = 0;
  int input_dim = 0;
  int output_dim = 1;
  bool softmax = false;
  Eigen::MatrixXd projection;  // empty when absent
  Eigen::VectorXd theta;

  int net_input_dim() const { return projection.size() ? static_cast<int>(projection.rows()) : input_dim; }
  Eigen::Index num_params() const;

  /// Network outputs before softmax, one row per input row.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& X) const;
  /// Model outputs (probabilities under softmax, raw values otherwise).
  Eigen::MatrixXd predict(const Eigen::MatrixXd& X) const;

  /// theta' = grad of sum_rows <G_row, predict(X)_row> with respect to theta.
  Eigen::VectorXd backprop(const Eigen::MatrixXd& X, const Eigen::MatrixXd& G) const;
};

/// Seeded random projection whose first r rows do not depend on r, so
/// projections of increasing dimension are nested.
Eigen::MatrixXd random_projection(int rows, int input_dim, std::uint64_t seed);

/// Initialization: output layer zero, hidden weights uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] for hidden weights and biases.
ParamModel make_model(Arch arch, int hidden, const Problem& problem, std::uint64_t seed,
                      Eigen::MatrixXd projection = {});
ParamModel make_model(Arch arch, int hidden, int input_dim, int output_dim, bool softmax, std::uint64_t seed,
                      Eigen::MatrixXd projection = {});

/// Copy of `model` inside a wider family (more hidden units and/or more
/// projection rows) that computes the same function. New hidden units get
/// seeded random input weights and zero output weights; new projection
/// rows get zero weights.
ParamModel embed(const ParamModel& model, int hidden, const Eigen::MatrixXd& projection, std::uint64_t seed);

FunctionTable forward(const ParamModel& model, const Problem& problem);
/// As forward, but only evaluates points that carry loss terms; other rows
/// hold the neutral output.
FunctionTable forward_active(const ParamModel& model, const Problem& problem);

struct LagrangianGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// L(f_theta, lambda) and its exact gradient in theta.
LagrangianGrad lagrangian_and_grad(const ParamModel& model, const Problem& problem, const Eigen::VectorXd& lambda);

enum class Optimizer { kGradientDescent, kMomentum, kAdam };
enum class InitPolicy { kWarmStartPrevious, kFreshSeeded };

const char* to_string(Optimizer opt);
Optimizer parse_optimizer(const std::string& name);

struct OracleConfig {
  int max_steps = 50;
  double step_size = 0.1;
  double rho_target = 0.0;  // stop once the gradient norm drops below this
  InitPolicy init_policy = InitPolicy::kWarmStartPrevious;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kGradientDescent;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool backtracking = true;
  double grad_tol = 1e-10;
};

struct OracleResult {
  ParamModel model;
  double lagrangian = 0.0;
  double init_lagrangian = 0.0;
  double gap_surrogate = 0.0;  // gradient norm at the returned iterate
  int steps = 0;
  std::vector<double> accepted;  // Lagrangian after each accepted step, starting with init
};

/// Approximate Lagrangian minimizer: descent from `init` with backtracking
/// (halving on increase, at most 30 halvings). Returns the best iterate.
OracleResult primal_oracle(const Problem& problem, const Eigen::VectorXd& lambda, const OracleConfig& cfg,
                           const ParamModel& init);

struct FitResult {
  ParamModel model;
  double residual = 0.0;  // L2(pi) distance to the targets
};

/// Least-squares fit of the family to `targets` in L2(pi), starting from
/// `init` (which fixes the family). Linear models with real outputs use
/// the exact normal equations.
FitResult fit_to_targets(const FunctionTable& targets, const ParamModel& init, const OracleConfig& cfg,
                         const Problem& problem);

}  // namespace duallearn
