#include "doctest.h"
#include "duallearn/dual_engine.hpp"
#include "duallearn/errors.hpp"
#include "duallearn/io.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;

namespace {

AscentConfig small_ascent(int T = 30) {
  AscentConfig cfg;
  cfg.iterations = T;
  cfg.eta = 1.0;
  cfg.t0 = T / 2;
  cfg.oracle.max_steps = 10;
  cfg.oracle.step_size = 0.2;
  cfg.checkpoint_stride = 5;
  return cfg;
}

}  // namespace

TEST_CASE("property: dual updates stay in the nonnegative orthant") {
  auto& rng = rng_for(1);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd lam = random_lambda(4, rng);
    Eigen::VectorXd s(4);
    for (Eigen::Index i = 0; i < 4; ++i) s[i] = g(rng);
    const Eigen::VectorXd next = dual_update(lam, s, 0.7);
    CHECK(next.minCoeff() >= 0.0);
    for (Eigen::Index i = 0; i < 4; ++i) {
      if (lam[i] + 0.7 * s[i] > 0.0) CHECK(next[i] == doctest::Approx(lam[i] + 0.7 * s[i]));
    }
  }
  CHECK_THROWS_AS(dual_update(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3), 1.0), StructuralError);
}

TEST_CASE("stochastic slack estimates are exact for full batches and unbiased otherwise") {
  const Problem p = fairness_problem(7, 50, 2);
  auto& rng = rng_for(3);
  const FunctionTable phi = random_table(p, rng);
  std::mt19937_64 batch_rng(4);
  CHECK(rel_err(stochastic_slack(p, phi, std::nullopt, batch_rng), p.slacks(phi)) < 1e-14);
  CHECK(rel_err(stochastic_slack(p, phi, 1000, batch_rng), p.slacks(phi)) < 1e-14);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
  const int draws = 4000;
  for (int k = 0; k < draws; ++k) mean += stochastic_slack(p, phi, 10, batch_rng);
  mean /= draws;
  const Eigen::VectorXd exact = p.slacks(phi);
  const double scale = (p.raw_losses(phi).tail(2)).cwiseAbs().maxCoeff();
  CHECK((mean - exact).cwiseAbs().maxCoeff() < 0.05 * scale);
}

TEST_CASE("dual ascent is deterministic and records every iteration") {
  const Problem p = fairness_problem(2, 40, 2);
  const ParamModel init = make_model(Arch::kMlp2, 6, p, 1);
  AscentConfig cfg = small_ascent();
  cfg.batch_size = 16;
  cfg.oracle_batch = 16;
  const DualTrace a = run_dual_ascent(p, init, cfg);
  const DualTrace b = run_dual_ascent(p, init, cfg);
  REQUIRE_FALSE(a.aborted);
  CHECK(a.length() == cfg.iterations);
  CHECK(trace_csv(a) == trace_csv(b));
  for (int t = 1; t <= a.length(); ++t) {
    CHECK(a.at(t).t == t);
    CHECK(a.at(t).lambda.minCoeff() >= 0.0);
    CHECK(a.at(t).lagrangian == doctest::Approx(a.at(t).objective + a.at(t).lambda.dot(a.at(t).slacks)));
  }
  for (int t = cfg.t0; t <= cfg.iterations; ++t) CHECK(a.checkpoints.count(t) == 1);
  cfg.seed = 99;
  CHECK(trace_csv(run_dual_ascent(p, init, cfg)) != trace_csv(a));
}

TEST_CASE("frozen duals train the unconstrained model") {
  const Problem p = regression_problem(3);
  AscentConfig cfg = small_ascent(10);
  cfg.freeze_dual = true;
  const DualTrace tr = run_dual_ascent(p, make_model(Arch::kLinear, 0, p, 0), cfg);
  CHECK(tr.final_lambda.isZero());
  for (const TraceRecord& r : tr.records) CHECK(r.lambda.isZero());
}

TEST_CASE("best iterate takes the earliest maximal Lagrangian") {
  DualTrace tr;
  for (int t = 1; t <= 6; ++t) {
    TraceRecord r;
    r.t = t;
    r.lagrangian = (t == 3 || t == 5) ? 2.0 : 1.0;
    r.slack_hat = Eigen::VectorXd::Constant(1, t == 2 ? 3.0 : 1.0);
    tr.records.push_back(r);
  }
  CHECK(best_iterate(tr, 1).index == 3);
  CHECK(best_iterate(tr, 4).index == 5);
  CHECK(best_iterate(tr, 6).index == 6);
  CHECK_THROWS_AS(best_iterate(tr, 0), ConfigError);
  CHECK(estimate_s2(tr) == doctest::Approx(9.9));
}

TEST_CASE("predictor bundle draws randomized checkpoints from the tail") {
  const Problem p = regression_problem(5);
  const ParamModel init = make_model(Arch::kLinear, 0, p, 0);
  const AscentConfig cfg = small_ascent(20);
  const DualTrace tr = run_dual_ascent(p, init, cfg);
  AscentConfig uc = cfg;
  uc.freeze_dual = true;
  const PredictorBundle bundle = make_bundle(tr, run_dual_ascent(p, init, uc), 7);
  CHECK(bundle.best_t >= cfg.t0);
  Predictor rnd(bundle, PredictorKind::kRandomized);
  const Eigen::VectorXd x = p.dataset().inputs().row(0).transpose();
  for (int k = 0; k < 30; ++k) {
    rnd.predict(x);
    CHECK(rnd.last_draw() >= cfg.t0);
    CHECK(rnd.last_draw() <= cfg.iterations);
  }
  CHECK(parse_predictor("last") == PredictorKind::kLast);
}

TEST_CASE("invalid ascent settings are rejected") {
  AscentConfig cfg = small_ascent();
  cfg.eta = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_ascent();
  cfg.t0 = cfg.iterations + 1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small_ascent();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}
