#include "duallearn/dual_solver.hpp"

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "duallearn/errors.hpp"

namespace duallearn {

double projected_residual(const Eigen::VectorXd& lambda, const Eigen::VectorXd& grad) {
  return (lambda - (lambda + grad).cwiseMax(0.0)).cwiseAbs().maxCoeff();
}

DualAscentResult maximize_concave_dual(const DualOracle& oracle, const Eigen::VectorXd& lambda0,
                                       const DualAscentConfig& cfg) {
  DualAscentResult res;
  const Eigen::Index m = lambda0.size();
  res.lambda = lambda0.cwiseMax(0.0).cwiseMin(cfg.cap);
  DualPoint pt = oracle(res.lambda, cfg.newton);
  if (!std::isfinite(pt.value)) throw NumericalError("dual function is not finite at the starting point");
  double step = cfg.initial_step;
  int stalls = 0;
  for (res.iterations = 0; res.iterations < cfg.max_iters; ++res.iterations) {
    res.residual = projected_residual(res.lambda, pt.grad);
    if (res.residual <= cfg.tol) {
      res.converged = true;
      break;
    }
    const double eps = std::min(1e-3, res.residual);
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(res.lambda[i] <= eps && pt.grad[i] < 0.0)) free.push_back(i);
    }

    auto try_direction = [&](const Eigen::VectorXd& d, double alpha0, int max_halvings, double* used) -> bool {
      double alpha = alpha0;
      for (int k = 0; k <= max_halvings; ++k) {
        Eigen::VectorXd lt = (res.lambda + alpha * d).cwiseMax(0.0);
        if ((lt.array() > cfg.cap).any()) {
          lt = lt.cwiseMin(cfg.cap);
          res.capped = true;
        }
        DualPoint trial = oracle(lt, cfg.newton);
        const double gain = pt.grad.dot(lt - res.lambda);
        const double noise = 1e-13 * (1.0 + std::abs(pt.value));
        if (std::isfinite(trial.value) && trial.value >= pt.value + 1e-4 * gain - noise && (lt - res.lambda).norm() > 0) {
          stalls = (trial.value - pt.value <= noise) ? stalls + 1 : 0;
          res.lambda = lt;
          pt = std::move(trial);
          *used = alpha;
          return true;
        }
        alpha *= 0.5;
      }
      return false;
    };

    bool moved = false;
    double used = 0.0;
    if (cfg.newton && pt.hess.rows() == m && !free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd A(nf, nf);
      Eigen::VectorXd gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = pt.grad[free[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < nf; ++b) A(a, b) = -pt.hess(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      const double reg = 1e-12 * (1.0 + A.diagonal().cwiseAbs().maxCoeff());
      A.diagonal().array() += reg;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      Eigen::VectorXd df = ldlt.solve(gf);
      if (ldlt.info() == Eigen::Success && df.allFinite() && gf.dot(df) > 0.0) {
        Eigen::VectorXd d = pt.grad;
        for (Eigen::Index a = 0; a < nf; ++a) d[free[static_cast<std::size_t>(a)]] = df[a];
        moved = try_direction(d, 1.0, 40, &used);
      }
    }
    if (!moved) {
      moved = try_direction(pt.grad, step, 60, &used);
      if (moved) step = std::min(1e12, 2.0 * used);
    }
    if (!moved || stalls >= 5) {
      res.residual = projected_residual(res.lambda, pt.grad);
      res.diagnostic = "dual ascent stalled at residual " + std::to_string(res.residual);
      break;
    }
  }
  res.residual = projected_residual(res.lambda, pt.grad);
  if (res.residual <= cfg.tol) res.converged = true;
  if (res.capped) {
    res.diagnostic = "multiplier reached the cap; the constraints may admit no strictly feasible point";
  } else if (!res.converged && res.diagnostic.empty()) {
    res.diagnostic = "dual ascent hit the iteration limit at residual " + std::to_string(res.residual);
  }
  res.value = pt.value;
  res.grad = pt.grad;
  return res;
}

}  // namespace duallearn
