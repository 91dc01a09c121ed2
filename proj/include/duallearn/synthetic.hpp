#pragma once

#include <cstdint>
#include <vector>

#include "duallearn/dataset.hpp"

namespace duallearn {

/// Tabular recidivism-style data: low-cardinality numeric features scaled to
/// [0, 1], gender (2 codes, 1 = female) and race (4 codes), and a binary
/// label from a planted logistic model that leaks the protected attributes.
struct CompasLikeConfig {
  int rows = 2000;
  std::uint64_t seed = 2024;
  double p_female = 0.2;
  std::vector<double> race_probs{0.51, 0.08, 0.34, 0.07};
  double gender_leak = 0.6;  // logit shift for gender 0
  std::vector<double> race_leak{-0.5, 0.2, 0.7, -0.2};
};

constexpr int kCompasFeatures = 8;

AttributeSchema compas_schema();
std::vector<Sample> generate_compas_like(const CompasLikeConfig& cfg);

/// One gender swap followed by a swap for every pair of race codes.
std::vector<Transform> compas_transforms();

/// Regression data for convex reference instances: Gaussian features, one
/// binary group attribute and a target that is non-linear in the features,
/// so a linear family cannot represent the unparametrized solution.
std::vector<Sample> generate_regression(int rows, int features, std::uint64_t seed, double group_shift = 0.8);

}  // namespace duallearn
