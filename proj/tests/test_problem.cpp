#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "duallearn/errors.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;

TEST_CASE("dataset normalizes weights and closes the support under transforms") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CompasLikeConfig cfg;
    cfg.rows = 40;
    cfg.seed = seed;
    const Dataset ds(generate_compas_like(cfg), compas_schema(), compas_transforms());
    double mass = 0.0;
    for (std::size_t i = 0; i < ds.num_samples(); ++i) mass += ds.sample(i).weight;
    CHECK(mass == doctest::Approx(1.0));
    CHECK(ds.measure().sum() == doctest::Approx(1.0));
    CHECK(ds.point_mass().sum() == doctest::Approx(1.0));
    for (std::size_t s = 0; s < ds.num_source_samples(); ++s) {
      for (std::size_t k = 0; k < ds.transforms().size(); ++k) {
        const CounterfactualImage img = ds.counterfactual_apply(s, k);
        REQUIRE(img.index < ds.num_samples());
        const std::size_t p = ds.point_of(img.index);
        CHECK(ds.measure()[static_cast<Eigen::Index>(p)] > 0.0);
        // Swaps are involutions.
        const CounterfactualImage back = ds.point_image(p, k);
        CHECK(back.index == ds.point_of(s));
      }
    }
  }
}

TEST_CASE("the evaluation measure equals the data mass without transforms") {
  const Dataset ds(generate_regression(25, 2, 3), AttributeSchema{{"group"}, {2}});
  CHECK((ds.measure() - ds.point_mass()).norm() < 1e-15);
}

TEST_CASE("transforms that do not apply are fixed points") {
  const Transform t{1, 2, 3, TransformKind::kSwap};
  CHECK_FALSE(t.apply({0, 1}).has_value());
  CHECK(t.apply({0, 2}).value() == std::vector<int>{0, 3});
  const Transform map{0, 0, 1, TransformKind::kMap};
  CHECK_FALSE(map.apply({1, 0}).has_value());
}

TEST_CASE("one-hot encoding appends protected codes") {
  const Eigen::VectorXd x = Dataset::encode(Eigen::Vector2d(0.5, 2.0), {1, 3}, compas_schema());
  REQUIRE(x.size() == 8);
  CHECK(x[0] == 0.5);
  CHECK(x[3] == 1.0);
  CHECK(x[7] == 1.0);
  CHECK(x.tail(6).sum() == 2.0);
}

TEST_CASE("dataset CSV round trip and seeded split") {
  CompasLikeConfig cfg;
  cfg.rows = 30;
  const auto samples = generate_compas_like(cfg);
  const auto path = (std::filesystem::temp_directory_path() / "duallearn_samples.csv").string();
  write_samples_csv(path, samples);
  const auto back = load_samples_csv(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK((back[i].features - samples[i].features).norm() == 0.0);
    CHECK(back[i].protected_attrs == samples[i].protected_attrs);
    CHECK(back[i].label == samples[i].label);
  }
  const auto [a1, b1] = split_samples(samples, 0.2, 9);
  const auto [a2, b2] = split_samples(samples, 0.2, 9);
  CHECK(a1.size() == 24);
  CHECK(b1.size() == 6);
  for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i].label == b2[i].label);
}

TEST_CASE("KL pair slack of identical paired outputs equals minus the level") {
  const Problem p = fairness_problem(3);
  FunctionTable phi(static_cast<Eigen::Index>(p.num_points()), 2);
  phi.col(0).setConstant(0.3);
  phi.col(1).setConstant(0.7);
  const Eigen::VectorXd s = p.slacks(phi);
  for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(-0.001).epsilon(1e-12));
}

TEST_CASE("property: KL pair slack is at least minus the level") {
  const Problem p = fairness_problem(4);
  auto& rng = rng_for(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd s = p.slacks(random_table(p, rng));
    for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(s[i] >= -0.001 - 1e-15);
  }
}

TEST_CASE("property: weighted gradient matches finite differences on function tables") {
  auto& rng = rng_for(5);
  const std::vector<Problem> problems{fairness_problem(2, 20, 2), regression_problem(2, 15)};
  for (const Problem& p : problems) {
    for (int trial = 0; trial < 10; ++trial) {
      const FunctionTable phi = random_table(p, rng);
      Eigen::VectorXd coef(static_cast<Eigen::Index>(p.num_constraints() + 1));
      coef << 1.0, random_lambda(p.num_constraints(), rng);
      const FunctionTable g = p.weighted_gradient(coef, phi);
      // Directional derivative along a random direction tangent to the domain.
      FunctionTable dir = random_table(p, rng) - random_table(p, rng);
      for (std::size_t j = 0; j < p.num_points(); ++j) {
        if (!p.is_active(j)) dir.row(static_cast<Eigen::Index>(j)).setZero();
      }
      const double h = 1e-6;
      auto value = [&](const FunctionTable& f) {
        double v = 0.0;
        const Eigen::VectorXd raw = p.raw_losses(f);
        for (Eigen::Index i = 0; i < coef.size(); ++i) v += coef[i] * raw[i];
        return v;
      };
      const double fd = (value(phi + h * dir) - value(phi - h * dir)) / (2.0 * h);
      const double an = (g.array() * dir.array()).sum();
      CHECK(rel_err(fd, an) < 1e-6);
    }
  }
}

TEST_CASE("property: block Hessians match finite differences of block gradients") {
  auto& rng = rng_for(6);
  const Problem p = fairness_problem(8, 20, 2);
  const FunctionTable phi = random_table(p, rng);
  Eigen::VectorXd coef(3);
  coef << 1.0, 0.7, 1.3;
  for (std::size_t b = 0; b < std::min<std::size_t>(p.blocks().size(), 6); ++b) {
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    p.block_derivatives(b, coef, phi, &g, &H);
    const auto& pts = p.blocks()[b];
    const int q = p.reduced_dim();
    for (Eigen::Index v = 0; v < g.size(); ++v) {
      const std::size_t point = pts[static_cast<std::size_t>(v / q)];
      Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
      e[v % q] = 1.0;
      const Eigen::VectorXd step = 1e-6 * p.lift(e);
      FunctionTable plus = phi, minus = phi;
      plus.row(static_cast<Eigen::Index>(point)) += step.transpose();
      minus.row(static_cast<Eigen::Index>(point)) -= step.transpose();
      Eigen::VectorXd gp, gm;
      p.block_derivatives(b, coef, plus, &gp, nullptr);
      p.block_derivatives(b, coef, minus, &gm, nullptr);
      CHECK(rel_err(Eigen::VectorXd((gp - gm) / 2e-6), Eigen::VectorXd(H.col(v))) < 1e-5);
    }
  }
}

TEST_CASE("squared error without regularization has modulus 2") {
  CHECK(closed_form_problem().mu0() == doctest::Approx(2.0));
  CHECK(regression_problem(1).mu0() > 0.0);
  CHECK(fairness_problem(1).mu0() > 0.0);
}

TEST_CASE("shifted problems move every slack by epsilon") {
  const Problem p = regression_problem(3);
  auto& rng = rng_for(3);
  const FunctionTable phi = random_table(p, rng);
  const Eigen::Vector2d eps(0.1, -0.2);
  CHECK(((p.shifted(eps).slacks(phi) - p.slacks(phi)) - eps).norm() < 1e-12);
}

TEST_CASE("structural errors are reported") {
  ProblemSpec spec;
  spec.samples = generate_regression(5, 1, 1);
  spec.schema = AttributeSchema{{"group"}, {2}};
  spec.objective = {LossKind::kSquaredError, 0.0, {}};
  ConstraintSpec c;
  c.loss = {LossKind::kKlPair, 0.0, {}};
  c.transform = Transform{0, 0, 1, TransformKind::kSwap};
  spec.constraints = {c};
  CHECK_THROWS(Problem(spec));  // KL pairs need probability outputs
  const Problem ok = regression_problem(1);
  CHECK_THROWS_AS(ok.check_table(FunctionTable::Zero(3, 1)), StructuralError);
}
