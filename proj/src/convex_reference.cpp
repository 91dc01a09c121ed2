#include "duallearn/convex_reference.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

Eigen::MatrixXd design(const Problem& problem, const ParamModel& family) {
  const auto& rows = problem.active_points();
  const Eigen::MatrixXd& all = problem.dataset().inputs();
  const Eigen::Index d = family.net_input_dim();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), d + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::VectorXd x = all.row(static_cast<Eigen::Index>(rows[r])).transpose();
    const Eigen::VectorXd xp = family.projection.size() ? Eigen::VectorXd(family.projection * x) : x;
    X.row(static_cast<Eigen::Index>(r)).head(d) = xp.transpose();
    X(static_cast<Eigen::Index>(r), d) = 1.0;
  }
  return X;
}

Eigen::MatrixXd theta_hessian(const Problem& problem, const ParamModel& model, const Eigen::VectorXd& coef,
                              const Eigen::MatrixXd& X) {
  const FunctionTable phi = forward(model, problem);
  const Eigen::Index K = model.output_dim;
  const Eigen::Index d = model.net_input_dim();
  const auto n = X.rows();
  std::vector<Eigen::MatrixXd> h(static_cast<std::size_t>(n));
  Eigen::MatrixXd Hb;
  for (std::size_t b = 0; b < problem.blocks().size(); ++b) {
    const std::size_t j = problem.blocks()[b].front();
    problem.block_derivatives(b, coef, phi, nullptr, &Hb);
    const auto it = std::lower_bound(problem.active_points().begin(), problem.active_points().end(), j);
    h[static_cast<std::size_t>(it - problem.active_points().begin())] = Hb;
  }
  auto idx = [&](Eigen::Index k, Eigen::Index c) { return c < d ? c * K + k : K * d + k; };
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(model.num_params(), model.num_params());
  Eigen::VectorXd w(n);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index kk = 0; kk < K; ++kk) {
      for (Eigen::Index r = 0; r < n; ++r) w[r] = h[static_cast<std::size_t>(r)](k, kk);
      const Eigen::MatrixXd B = X.transpose() * w.asDiagonal() * X;
      for (Eigen::Index c = 0; c <= d; ++c) {
        for (Eigen::Index cc = 0; cc <= d; ++cc) H(idx(k, c), idx(kk, cc)) += B(c, cc);
      }
    }
  }
  return H;
}

}  // namespace

bool supports_exact_reference(const Problem& problem, const ParamModel& family) {
  if (family.arch != Arch::kLinear || family.softmax || problem.geometry() != OutputGeometry::kReals) return false;
  auto ok = [](LossKind k) { return k == LossKind::kSquaredError || k == LossKind::kMeanOutput; };
  if (!ok(problem.spec().objective.kind)) return false;
  for (const ConstraintSpec& c : problem.spec().constraints) {
    if (!ok(c.loss.kind)) return false;
  }
  return true;
}

ExactDualPoint exact_family_dual(const Problem& problem, const ParamModel& family, const Eigen::VectorXd& lambda,
                                 bool want_hessian) {
  if (!supports_exact_reference(problem, family)) {
    throw ConfigError("exact parametrized dual needs a linear family with quadratic or affine losses");
  }
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  Eigen::VectorXd coef(m + 1);
  coef << 1.0, lambda;
  const Eigen::MatrixXd X = design(problem, family);
  ParamModel model = family;
  // The Lagrangian is a convex quadratic in theta, so Newton converges in one
  // step up to round-off; the loop only polishes.
  LagrangianGrad lg = lagrangian_and_grad(model, problem, lambda);
  for (int it = 0; it < 20; ++it) {
    const Eigen::MatrixXd H = theta_hessian(problem, model, coef, X);
    const Eigen::VectorXd step = H.completeOrthogonalDecomposition().solve(lg.grad);
    ParamModel trial = model;
    double t = 1.0;
    LagrangianGrad lt;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      trial.theta = model.theta - t * step;
      lt = lagrangian_and_grad(trial, problem, lambda);
      if (lt.value <= lg.value + 1e-15 * (1.0 + std::abs(lg.value))) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const bool done = lt.grad.norm() >= lg.grad.norm() * 0.5 && it > 0;
    model = trial;
    lg = lt;
    if (lg.grad.norm() <= 1e-14 * (1.0 + std::abs(lg.value)) || done) break;
  }
  ExactDualPoint out;
  const FunctionTable phi = forward(model, problem);
  out.grad = problem.slacks(phi);
  out.value = problem.objective(phi) + lambda.dot(out.grad);
  if (want_hessian) {
    const Eigen::MatrixXd H = theta_hessian(problem, model, coef, X);
    Eigen::MatrixXd J(model.num_params(), m);
    const Eigen::MatrixXd& inputs = problem.dataset().inputs();
    for (Eigen::Index i = 0; i < m; ++i) J.col(i) = model.backprop(inputs, problem.loss_gradient(static_cast<std::size_t>(i + 1), phi));
    out.hess = -J.transpose() * H.completeOrthogonalDecomposition().solve(J);
    out.hess = 0.5 * (out.hess + out.hess.transpose()).eval();
  }
  out.model = std::move(model);
  return out;
}

ExactFamilySolution solve_exact_family(const Problem& problem, const ParamModel& family, const DualAscentConfig& cfg) {
  DualOracle oracle = [&](const Eigen::VectorXd& lambda, bool want_hessian) {
    ExactDualPoint p = exact_family_dual(problem, family, lambda, want_hessian);
    return DualPoint{p.value, p.grad, p.hess};
  };
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  const DualAscentResult res = maximize_concave_dual(oracle, Eigen::VectorXd::Zero(m), cfg);
  ExactFamilySolution sol;
  sol.lambda_star = res.lambda;
  ExactDualPoint p = exact_family_dual(problem, family, res.lambda, false);
  sol.model = p.model;
  sol.slacks = p.grad;
  sol.dual_value = p.value;
  sol.primal_value = problem.objective(forward(p.model, problem));
  sol.converged = res.converged;
  return sol;
}

}  // namespace duallearn
