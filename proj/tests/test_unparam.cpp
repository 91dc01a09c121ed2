#include <Eigen/Eigenvalues>
#include <cmath>

#include "doctest.h"
#include "duallearn/convex_reference.hpp"
#include "duallearn/errors.hpp"
#include "duallearn/unparam.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;

TEST_CASE("closed-form instance: hand KKT gives lambda 2, phi 0, value 1") {
  // L = (phi - 1)^2 + lambda phi is minimized at phi = 1 - lambda / 2, so
  // g(lambda) = lambda - lambda^2 / 4, maximized at lambda = 2.
  const Problem p = closed_form_problem();
  UnparamConfig cfg;
  cfg.ascent.tol = 1e-12;
  const UnparamSolution s = solve_unparam_dual(p, cfg);
  CHECK(std::abs(s.lambda_star[0] - 2.0) < 1e-8);
  CHECK(std::abs(s.phi_star(0, 0)) < 1e-8);
  CHECK(std::abs(s.primal_value - 1.0) < 1e-8);
  CHECK(std::abs(s.dual_value - 1.0) < 1e-8);
  for (double lam : {0.0, 0.5, 1.0, 3.0}) {
    CHECK(dual_function_unparam(p, Eigen::VectorXd::Constant(1, lam)).value == doctest::Approx(lam - lam * lam / 4));
  }
}

TEST_CASE("property: strong duality and complementary slackness on random instances") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    for (const Problem& p : {regression_problem(seed, 25), fairness_problem(seed, 40, 3)}) {
      const UnparamSolution s = solve_unparam_dual(p);
      CHECK(std::abs(s.primal_value - s.dual_value) <= 1e-6 * (1.0 + std::abs(s.primal_value)));
      CHECK(s.kkt_residuals.cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(s.slacks.maxCoeff() <= 1e-6);
      CHECK(s.lambda_star.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("property: dual gradient equals the slacks of the Lagrangian minimizer") {
  auto& rng = rng_for(9);
  const Problem p = fairness_problem(2, 40, 3);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::VectorXd lam = random_lambda(3, rng);
    const DualPoint dp = dual_point_unparam(p, lam, true);
    const FunctionTable phi = minimize_lagrangian_unparam(p, lam);
    CHECK(rel_err(dp.grad, p.slacks(phi)) < 1e-9);
    for (Eigen::Index i = 0; i < 3; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
      e[i] = 1e-5;
      const double fd = (dual_function_unparam(p, lam + e).value - dual_function_unparam(p, lam - e).value) / 2e-5;
      CHECK(rel_err(fd, dp.grad[i]) < 1e-6);
    }
    // The Hessian is negative semidefinite.
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(dp.hess).eigenvalues().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("KL between pairs decreases as the multiplier grows") {
  const Problem p = fairness_problem(3, 60, 1);
  double prev = INFINITY;
  for (double lam : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double kl = p.raw_losses(minimize_lagrangian_unparam(p, Eigen::VectorXd::Constant(1, lam)))[1];
    CHECK(kl <= prev + 1e-12);
    prev = kl;
  }
}

TEST_CASE("infeasible constraint sets raise with a certificate") {
  const Problem p = regression_problem(2, 20, 2, 0.5, 0.5, -0.1);
  try {
    solve_unparam_dual(p);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(e.certificate().minCoeff() >= 0.0);
    CHECK(e.certificate().maxCoeff() > 0.0);
  }
}

TEST_CASE("the perturbation function is convex and its conjugate matches the dual") {
  const Problem p = regression_problem(4, 20);
  std::vector<Eigen::VectorXd> eps;
  for (double a : {-0.2, -0.1, 0.0, 0.1, 0.2}) {
    for (double b : {-0.2, 0.0, 0.2}) eps.push_back(Eigen::Vector2d(a, b));
  }
  std::vector<PerturbationPoint> pts;
  for (const auto& e : eps) pts.push_back(perturbation_value(p, e));
  // Midpoint convexity along the first axis.
  for (std::size_t k = 0; k + 6 < pts.size(); k += 3) {
    CHECK(pts[k + 3].value <= 0.5 * (pts[k].value + pts[k + 6].value) + 1e-9);
  }
  const FenchelReport rep = fenchel_residual(p, {Eigen::Vector2d(0.2, 0.0), Eigen::Vector2d(0.5, 0.1)}, pts);
  for (double r : rep.residuals) CHECK(r >= -1e-7);
}

TEST_CASE("exact linear-family dual never exceeds the unparametrized dual from below") {
  auto& rng = rng_for(12);
  const Problem p = regression_problem(6, 30, 2, 0.5, 0.5, 2.0);
  const ParamModel fam = make_model(Arch::kLinear, 0, p, 0);
  REQUIRE(supports_exact_reference(p, fam));
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd lam = random_lambda(2, rng);
    CHECK(exact_family_dual(p, fam, lam).value >= dual_function_unparam(p, lam).value - 1e-9);
  }
  const ExactFamilySolution sol = solve_exact_family(p, fam);
  CHECK(sol.converged);
  CHECK(std::abs(sol.primal_value - sol.dual_value) < 1e-6 * (1 + std::abs(sol.primal_value)));
}
