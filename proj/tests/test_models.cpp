#include "doctest.h"
#include "duallearn/errors.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;

namespace {

double fd_check(const ParamModel& model, const Problem& p, const Eigen::VectorXd& lambda, std::mt19937_64& rng) {
  const LagrangianGrad lg = lagrangian_and_grad(model, p, lambda);
  Eigen::VectorXd dir(model.theta.size());
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = g(rng);
  dir.normalize();
  const double h = 1e-5;
  ParamModel plus = model, minus = model;
  plus.theta += h * dir;
  minus.theta -= h * dir;
  const double fd = (lagrangian_and_grad(plus, p, lambda).value - lagrangian_and_grad(minus, p, lambda).value) / (2 * h);
  return rel_err(fd, lg.grad.dot(dir));
}

}  // namespace

TEST_CASE("property: Lagrangian gradient in theta matches central differences") {
  auto& rng = rng_for(21);
  const Problem fair = fairness_problem(5, 30, 2);
  const Problem reg = regression_problem(5, 20);
  for (int trial = 0; trial < 10; ++trial) {
    ParamModel mlp = make_model(Arch::kMlp2, 6, fair, 100 + trial);
    std::normal_distribution<double> g(0.0, 0.5);
    for (Eigen::Index i = 0; i < mlp.theta.size(); ++i) mlp.theta[i] += g(rng);
    CHECK(fd_check(mlp, fair, random_lambda(2, rng), rng) < 1e-6);
    ParamModel lin = make_model(Arch::kLinear, 0, reg, 200 + trial);
    for (Eigen::Index i = 0; i < lin.theta.size(); ++i) lin.theta[i] += g(rng);
    CHECK(fd_check(lin, reg, random_lambda(2, rng), rng) < 1e-6);
  }
}

TEST_CASE("softmax models output probability vectors") {
  const Problem p = fairness_problem(2);
  const ParamModel m = make_model(Arch::kMlp2, 8, p, 3);
  const FunctionTable out = forward(m, p);
  CHECK((out.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(out.minCoeff() > 0.0);
}

TEST_CASE("random projections are nested") {
  const Eigen::MatrixXd a = random_projection(3, 10, 7);
  const Eigen::MatrixXd b = random_projection(6, 10, 7);
  CHECK((b.topRows(3) - a).norm() == 0.0);
}

TEST_CASE("embedding into a wider family preserves the function") {
  const Problem p = fairness_problem(4);
  const int d = static_cast<int>(p.dataset().input_dim());
  ParamModel small = make_model(Arch::kMlp2, 4, p, 1, random_projection(3, d, 9));
  auto& rng = rng_for(2);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < small.theta.size(); ++i) small.theta[i] = g(rng);
  const ParamModel wide = embed(small, 10, random_projection(6, d, 9), 5);
  CHECK(wide.theta.size() > small.theta.size());
  CHECK((forward(wide, p) - forward(small, p)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the primal oracle never increases the Lagrangian") {
  const Problem p = fairness_problem(6, 40, 2);
  auto& rng = rng_for(4);
  for (Optimizer opt : {Optimizer::kGradientDescent, Optimizer::kMomentum, Optimizer::kAdam}) {
    OracleConfig cfg;
    cfg.max_steps = 20;
    cfg.step_size = 0.1;
    cfg.optimizer = opt;
    const ParamModel init = make_model(Arch::kMlp2, 8, p, 3);
    const Eigen::VectorXd lambda = random_lambda(2, rng);
    const OracleResult r = primal_oracle(p, lambda, cfg, init);
    CHECK(r.lagrangian <= r.init_lagrangian + 1e-12);
    CHECK(r.lagrangian == doctest::Approx(lagrangian_and_grad(r.model, p, lambda).value));
  }
}

TEST_CASE("linear least-squares fit is exact when targets are in the family") {
  const Problem p = regression_problem(8, 25, 3);
  ParamModel truth = make_model(Arch::kLinear, 0, p, 1);
  truth.theta.setLinSpaced(-1.0, 1.0);
  const FitResult fit = fit_to_targets(forward(truth, p), make_model(Arch::kLinear, 0, p, 2), OracleConfig{}, p);
  CHECK(fit.residual < 1e-10);
}

TEST_CASE("incompatible models and negative multipliers are rejected") {
  const Problem p = regression_problem(1);
  const ParamModel m = make_model(Arch::kLinear, 0, 99, 1, false, 0);
  CHECK_THROWS(primal_oracle(p, Eigen::Vector2d::Zero(), OracleConfig{}, m));
  CHECK_THROWS_AS(primal_oracle(p, Eigen::Vector2d(-1.0, 0.0), OracleConfig{}, make_model(Arch::kLinear, 0, p, 0)),
                  StructuralError);
  CHECK_THROWS_AS(parse_arch("cnn"), ConfigError);
}
