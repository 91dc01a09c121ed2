#include "duallearn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

// Integer draw in [0, levels) scaled to [0, 1].
double level(std::mt19937_64& rng, int levels, double mean_frac) {
  std::binomial_distribution<int> draw(levels - 1, std::clamp(mean_frac, 0.01, 0.99));
  return static_cast<double>(draw(rng)) / (levels - 1);
}

}  // namespace

AttributeSchema compas_schema() { return AttributeSchema{{"gender", "race"}, {2, 4}}; }

std::vector<Transform> compas_transforms() {
  std::vector<Transform> out{{0, 0, 1, TransformKind::kSwap}};
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) out.push_back({1, a, b, TransformKind::kSwap});
  }
  return out;
}

std::vector<Sample> generate_compas_like(const CompasLikeConfig& cfg) {
  if (cfg.rows < 1) throw ConfigError("rows must be positive");
  if (cfg.race_probs.size() != 4 || cfg.race_leak.size() != 4) throw ConfigError("race parameters need 4 entries");
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution female(cfg.p_female);
  std::discrete_distribution<int> race(cfg.race_probs.begin(), cfg.race_probs.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.rows));
  for (int i = 0; i < cfg.rows; ++i) {
    const int g = female(rng) ? 1 : 0;
    const int r = race(rng);
    const double male = g == 0 ? 1.0 : 0.0;
    const double race_bias = r == 2 ? 0.15 : (r == 0 ? -0.05 : 0.0);
    Eigen::VectorXd x(kCompasFeatures);
    x[0] = level(rng, 5, 0.45 - 0.1 * race_bias);             // age bucket
    x[1] = level(rng, 10, 0.2 + race_bias + 0.08 * male);      // prior offenses
    x[2] = level(rng, 4, 0.08 + 0.5 * race_bias);              // juvenile felonies
    x[3] = level(rng, 4, 0.1 + 0.05 * male);                   // juvenile misdemeanors
    x[4] = level(rng, 4, 0.12);                                // other juvenile counts
    x[5] = level(rng, 2, 0.35 + 0.1 * male);                   // charge degree
    x[6] = level(rng, 5, 0.25 + race_bias);                    // days in jail bucket
    x[7] = level(rng, 4, 0.3);                                 // length of stay bucket
    const double logit = -0.9 + 2.4 * x[1] - 1.6 * x[0] + 1.1 * x[2] + 0.5 * x[3] + 0.3 * x[4] + 0.4 * x[5] +
                         0.8 * x[6] + 0.3 * x[7] + cfg.gender_leak * male + cfg.race_leak[static_cast<std::size_t>(r)];
    const double p = 1.0 / (1.0 + std::exp(-logit));
    out.push_back(Sample{x, {g, r}, unit(rng) < p ? 1.0 : 0.0, 1.0});
  }
  return out;
}

std::vector<Sample> generate_regression(int rows, int features, std::uint64_t seed, double group_shift) {
  if (rows < 1 || features < 1) throw ConfigError("rows and features must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution group(0.4);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    Eigen::VectorXd x(features);
    for (int k = 0; k < features; ++k) x[k] = gauss(rng);
    const int z = group(rng) ? 1 : 0;
    double y = std::sin(2.0 * x[0]) + 0.5 * x[0] + 0.1 * gauss(rng);
    if (features > 1) y += 0.5 * x[1] * x[1] - 0.5;
    y += group_shift * z;
    out.push_back(Sample{x, {z}, y, 1.0});
  }
  return out;
}

}  // namespace duallearn
