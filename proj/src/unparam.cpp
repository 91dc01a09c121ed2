#include "duallearn/unparam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Cholesky with a growing diagonal shift for nearly singular Hessians.
Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd H) {
  H.diagonal().array() += 1e-12;
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  double shift = 1e-10 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  while (llt.info() != Eigen::Success && shift < 1e12) {
    Eigen::MatrixXd Hs = H;
    Hs.diagonal().array() += shift;
    llt.compute(Hs);
    shift *= 10.0;
  }
  if (llt.info() != Eigen::Success) throw NumericalError("block Hessian could not be factorized");
  return llt;
}

class BlockSolver {
 public:
  BlockSolver(const Problem& p, const Eigen::VectorXd& coef, double delta)
      : p_(p), coef_(coef), delta_(delta), simplex_(p.geometry() == OutputGeometry::kSimplex), q_(p.reduced_dim()) {}

  double eval(std::size_t b, const FunctionTable& phi, Eigen::VectorXd* g, Eigen::MatrixXd* H) const {
    double v = p_.block_derivatives(b, coef_, phi, g, H);
    if (delta_ > 0.0 && std::isfinite(v)) {
      const auto& pts = p_.blocks()[b];
      const Eigen::VectorXd& pi = p_.dataset().measure();
      for (std::size_t l = 0; l < pts.size(); ++l) {
        const auto J = static_cast<Eigen::Index>(pts[l]);
        const Eigen::VectorXd x = phi.row(J).transpose();
        v += delta_ * pi[J] * x.squaredNorm();
        if (g) g->segment(static_cast<Eigen::Index>(l) * q_, q_) += p_.reduce(2.0 * delta_ * pi[J] * x);
      }
      if (H) *H += 2.0 * delta_ * p_.block_metric(b);
    }
    return v;
  }

  void solve(std::size_t b, FunctionTable& phi, const NewtonConfig& cfg, MinimizerInfo& info) const {
    const auto& pts = p_.blocks()[b];
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    const auto K = phi.cols();
    Eigen::MatrixXd backup(static_cast<Eigen::Index>(pts.size()), K);
    double gnorm = kInf;
    int it = 0;
    for (; it < cfg.max_iters; ++it) {
      const double v = eval(b, phi, &g, &H);
      if (!std::isfinite(v)) {
        throw NumericalError("Lagrangian minimization left the output domain",
                             p_.dataset().representative_sample(pts.front()));
      }
      gnorm = g.norm();
      if (gnorm <= cfg.grad_tol) break;
      const Eigen::VectorXd d = -robust_llt(H).solve(g);
      const double slope = g.dot(d);
      if (!(slope < 0.0)) break;
      if (-slope < 1e-30) break;

      double alpha = 1.0;
      if (simplex_) {
        for (std::size_t l = 0; l < pts.size(); ++l) {
          const Eigen::VectorXd dp = p_.lift(d.segment(static_cast<Eigen::Index>(l) * q_, q_));
          for (Eigen::Index k = 0; k < K; ++k) {
            if (dp[k] < 0.0) alpha = std::min(alpha, -0.99 * phi(static_cast<Eigen::Index>(pts[l]), k) / dp[k]);
          }
        }
      }
      for (std::size_t l = 0; l < pts.size(); ++l) backup.row(static_cast<Eigen::Index>(l)) = phi.row(static_cast<Eigen::Index>(pts[l]));
      bool accepted = false;
      for (int h = 0; h < 60; ++h) {
        for (std::size_t l = 0; l < pts.size(); ++l) {
          phi.row(static_cast<Eigen::Index>(pts[l])) =
              backup.row(static_cast<Eigen::Index>(l)) +
              alpha * p_.lift(d.segment(static_cast<Eigen::Index>(l) * q_, q_)).transpose();
        }
        const double vt = eval(b, phi, nullptr, nullptr);
        if (std::isfinite(vt) && vt <= v + 1e-4 * alpha * slope + 1e-15 * std::abs(v)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        for (std::size_t l = 0; l < pts.size(); ++l) phi.row(static_cast<Eigen::Index>(pts[l])) = backup.row(static_cast<Eigen::Index>(l));
        break;
      }
    }
    if (it == cfg.max_iters || gnorm > cfg.grad_tol) {
      eval(b, phi, &g, nullptr);
      gnorm = g.norm();
    }
    info.max_grad = std::max(info.max_grad, gnorm);
    info.max_iters_used = std::max(info.max_iters_used, it);
  }

 private:
  const Problem& p_;
  Eigen::VectorXd coef_;
  double delta_;
  bool simplex_;
  int q_;
};

Eigen::VectorXd lagrangian_coef(const Eigen::VectorXd& lambda) {
  Eigen::VectorXd coef(lambda.size() + 1);
  coef << 1.0, lambda;
  return coef;
}

void check_lambda(const Problem& problem, const Eigen::VectorXd& lambda) {
  if (lambda.size() != static_cast<Eigen::Index>(problem.num_constraints())) {
    throw StructuralError("dual vector has wrong length");
  }
  if (!lambda.allFinite() || (lambda.array() < 0.0).any()) throw StructuralError("dual vector must be nonnegative");
}

}  // namespace

FunctionTable minimize_weighted(const Problem& problem, const Eigen::VectorXd& coef, double delta,
                                const FunctionTable* warm, const NewtonConfig& cfg, MinimizerInfo* info) {
  FunctionTable phi = problem.neutral_table();
  if (warm) {
    if (warm->rows() != phi.rows() || warm->cols() != phi.cols()) throw StructuralError("warm start has wrong shape");
    for (std::size_t j : problem.active_points()) {
      const auto J = static_cast<Eigen::Index>(j);
      phi.row(J) = warm->row(J);
    }
    if (problem.geometry() == OutputGeometry::kSimplex) {
      // Pull warm starts strictly inside the simplex.
      for (std::size_t j : problem.active_points()) {
        const auto J = static_cast<Eigen::Index>(j);
        if (phi.row(J).minCoeff() < 1e-12 || std::abs(phi.row(J).sum() - 1.0) > 1e-9) {
          phi.row(J) = 0.9 * phi.row(J).cwiseMax(0.0) / std::max(phi.row(J).cwiseMax(0.0).sum(), 1e-300) +
                       Eigen::RowVectorXd::Constant(phi.cols(), 0.1 / static_cast<double>(phi.cols()));
        }
      }
    }
  }
  BlockSolver solver(problem, coef, delta);
  MinimizerInfo local;
  for (std::size_t b = 0; b < problem.blocks().size(); ++b) solver.solve(b, phi, cfg, local);
  if (info) *info = local;
  return phi;
}

FunctionTable minimize_lagrangian_unparam(const Problem& problem, const Eigen::VectorXd& lambda,
                                          const FunctionTable* warm) {
  check_lambda(problem, lambda);
  if (!(problem.mu0() > 0.0)) {
    throw ConfigError("objective is not strongly convex on the support; set tau > 0 on the objective");
  }
  return minimize_weighted(problem, lagrangian_coef(lambda), 0.0, warm);
}

DualValue dual_function_unparam(const Problem& problem, const Eigen::VectorXd& lambda) {
  DualPoint pt = dual_point_unparam(problem, lambda, false);
  return {pt.value, pt.grad};
}

DualPoint dual_point_unparam(const Problem& problem, const Eigen::VectorXd& lambda, bool want_hessian,
                             FunctionTable* phi_out, const FunctionTable* warm) {
  FunctionTable phi = minimize_lagrangian_unparam(problem, lambda, warm);
  const Eigen::VectorXd raw = problem.raw_losses(phi);
  DualPoint pt;
  pt.grad = raw.tail(raw.size() - 1) - problem.levels();
  pt.value = raw[0] + lambda.dot(pt.grad);
  if (want_hessian) {
    const auto m = static_cast<Eigen::Index>(problem.num_constraints());
    const Eigen::VectorXd coef = lagrangian_coef(lambda);
    pt.hess = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    for (std::size_t b = 0; b < problem.blocks().size(); ++b) {
      problem.block_derivatives(b, coef, phi, nullptr, &H);
      Eigen::MatrixXd J(H.rows(), m);
      for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m + 1);
        e[i + 1] = 1.0;
        problem.block_derivatives(b, e, phi, &g, nullptr);
        J.col(i) = g;
      }
      if (J.cwiseAbs().maxCoeff() == 0.0) continue;
      const Eigen::MatrixXd X = robust_llt(H).solve(J);
      pt.hess.noalias() -= J.transpose() * X;
    }
    pt.hess = 0.5 * (pt.hess + pt.hess.transpose()).eval();
  }
  if (phi_out) *phi_out = std::move(phi);
  return pt;
}

Eigen::VectorXd find_slater_point(const Problem& problem, int max_iters) {
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd coef(m + 1);
  FunctionTable phi = problem.neutral_table();
  constexpr double kDelta = 1e-6;
  Eigen::VectorXd best_lambda = lambda;
  double best_value = -kInf;
  for (int t = 0; t < max_iters; ++t) {
    coef << 0.0, lambda;
    phi = minimize_weighted(problem, coef, kDelta, &phi);
    const Eigen::VectorXd s = problem.slacks(phi);
    if (s.maxCoeff() < 0.0) return s;
    const double value = lambda.dot(s);
    if (value > best_value) {
      best_value = value;
      best_lambda = lambda;
    }
    const double scale = std::max(s.cwiseAbs().maxCoeff(), 1e-300);
    const double eta = 1.0 / std::sqrt(static_cast<double>(t + 1));
    lambda = (lambda.array() * (eta * s.array() / scale).exp()).matrix();
    lambda /= lambda.sum();
  }
  throw InfeasibleError("no strictly feasible point found; the multiplier certifies a positive weighted slack",
                        best_lambda);
}

UnparamSolution solve_unparam_dual(const Problem& problem, const UnparamConfig& cfg) {
  if (!(problem.mu0() > 0.0)) {
    throw ConfigError("objective is not strongly convex on the support; set tau > 0 on the objective");
  }
  UnparamSolution sol;
  if (cfg.slater_check) sol.slater_witness_slacks = find_slater_point(problem, cfg.slater_iters);

  FunctionTable cache = problem.neutral_table();
  DualOracle oracle = [&](const Eigen::VectorXd& lambda, bool want_hessian) {
    FunctionTable phi;
    DualPoint pt = dual_point_unparam(problem, lambda, want_hessian, &phi, &cache);
    cache = std::move(phi);
    return pt;
  };
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  const DualAscentResult res = maximize_concave_dual(oracle, Eigen::VectorXd::Zero(m), cfg.ascent);

  sol.lambda_star = res.lambda;
  sol.phi_star = minimize_lagrangian_unparam(problem, res.lambda, &cache);
  const Eigen::VectorXd raw = problem.raw_losses(sol.phi_star);
  sol.primal_value = raw[0];
  sol.slacks = raw.tail(m) - problem.levels();
  sol.dual_value = sol.primal_value + sol.lambda_star.dot(sol.slacks);
  sol.kkt_residuals = sol.lambda_star.cwiseProduct(sol.slacks);
  sol.duality_residual = std::abs(sol.primal_value - sol.dual_value);
  sol.dual_residual = projected_residual(sol.lambda_star, sol.slacks);
  sol.iterations = res.iterations;
  sol.converged = res.converged;
  sol.capped = res.capped;
  if (!res.diagnostic.empty()) sol.diagnostics.push_back(res.diagnostic);
  if (sol.slacks.maxCoeff() > 1e-8) {
    sol.diagnostics.push_back("phi* violates a constraint by " + std::to_string(sol.slacks.maxCoeff()));
  }
  return sol;
}

PerturbationPoint perturbation_value(const Problem& problem, const Eigen::VectorXd& epsilon, const UnparamConfig& cfg) {
  PerturbationPoint pt;
  pt.epsilon = epsilon;
  try {
    const UnparamSolution sol = solve_unparam_dual(problem.shifted(epsilon), cfg);
    if (sol.capped) {
      pt.value = kInf;
      pt.feasible = false;
    } else {
      pt.value = sol.primal_value;
      pt.feasible = true;
    }
  } catch (const InfeasibleError&) {
    pt.value = kInf;
    pt.feasible = false;
  }
  return pt;
}

FenchelReport fenchel_residual(const Problem& problem, const std::vector<Eigen::VectorXd>& lambda_grid,
                               const std::vector<PerturbationPoint>& perturbations) {
  if (lambda_grid.empty() || perturbations.empty()) throw ConfigError("Fenchel grids must be nonempty");
  FenchelReport rep;
  for (const Eigen::VectorXd& lambda : lambda_grid) {
    double conj = -kInf;
    for (const PerturbationPoint& p : perturbations) {
      if (p.feasible) conj = std::max(conj, lambda.dot(p.epsilon) - p.value);
    }
    const double r = -dual_function_unparam(problem, lambda).value - conj;
    rep.residuals.push_back(r);
    rep.max_residual = std::max(rep.max_residual, std::abs(r));
  }
  return rep;
}

FenchelReport fenchel_residual(const Problem& problem, const std::vector<Eigen::VectorXd>& lambda_grid,
                               const std::vector<Eigen::VectorXd>& epsilon_grid, const UnparamConfig& cfg) {
  std::vector<PerturbationPoint> pts;
  pts.reserve(epsilon_grid.size());
  for (const Eigen::VectorXd& eps : epsilon_grid) pts.push_back(perturbation_value(problem, eps, cfg));
  return fenchel_residual(problem, lambda_grid, pts);
}

}  // namespace duallearn
