#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallearn/dataset.hpp"

namespace duallearn {

enum class LossKind {
  kSquaredError,
  kCrossEntropy,
  kKlPair,
  kMeanOutput,  // scale * phi[component], an affine functional
};

enum class OutputGeometry {
  kReals,
  kSimplex,  // outputs are probability vectors
};

const char* to_string(LossKind kind);
const char* to_string(OutputGeometry geometry);
LossKind parse_loss_kind(const std::string& name);
OutputGeometry parse_geometry(const std::string& name);

struct DeclaredConstants {
  std::optional<double> M;
  std::optional<double> beta;
  std::optional<double> mu;
};

struct PointwiseLoss {
  LossKind kind = LossKind::kSquaredError;
  double tau = 0.0;  // Tikhonov weight: adds tau * E_pi ||phi||^2
  DeclaredConstants declared;
};

/// Restricts a loss to samples with `attribute == value`, taking the
/// conditional expectation over that group.
struct GroupFilter {
  int attribute = 0;
  int value = 0;
};

struct ConstraintSpec {
  PointwiseLoss loss;
  std::optional<Transform> transform;
  double level = 0.0;
  double scale = 1.0;  // mean_output only
  int component = 0;   // mean_output only
  std::optional<GroupFilter> group;
  std::string name;
};

struct ProblemSpec {
  std::vector<Sample> samples;
  AttributeSchema schema;
  PointwiseLoss objective;
  std::vector<ConstraintSpec> constraints;
  int output_dim = 1;
  OutputGeometry geometry = OutputGeometry::kReals;
};

/// Output values on the support, one row per support point. Under simplex
/// geometry each row is a probability vector.
using FunctionTable = Eigen::MatrixXd;

/// A ProblemSpec compiled against its counterfactually closed dataset.
///
/// Loss index 0 is the objective; 1..m are the constraints. "Raw" values
/// exclude the constraint level, slacks subtract it.
class Problem {
 public:
  explicit Problem(ProblemSpec spec);

  const Dataset& dataset() const { return data_->dataset; }
  const ProblemSpec& spec() const { return data_->spec; }
  std::size_t num_constraints() const { return data_->losses.size() - 1; }
  int output_dim() const { return data_->K; }
  OutputGeometry geometry() const { return data_->spec.geometry; }
  std::size_t num_points() const { return dataset().support_size(); }
  /// Reduced coordinate count per point (K, or K-1 on the simplex).
  int reduced_dim() const { return data_->q; }
  const Eigen::VectorXd& levels() const { return levels_; }

  /// Points with positive evaluation measure; all losses live on these.
  const std::vector<std::size_t>& active_points() const { return data_->active; }
  bool is_active(std::size_t point) const { return data_->active_mask[point]; }

  /// Connected components of active points under the pair terms.
  const std::vector<std::vector<std::size_t>>& blocks() const { return data_->blocks; }

  /// Analytic strong-convexity modulus of the objective in the L2(pi) metric.
  double mu0() const { return data_->mu0; }

  FunctionTable neutral_table() const;

  double raw_loss(std::size_t i, const FunctionTable& phi) const;
  Eigen::VectorXd raw_losses(const FunctionTable& phi) const;
  double objective(const FunctionTable& phi) const { return raw_loss(0, phi); }
  Eigen::VectorXd slacks(const FunctionTable& phi) const;
  double lagrangian(const FunctionTable& phi, const Eigen::VectorXd& lambda) const;

  /// Euclidean gradient of sum_i coef_i * raw_loss_i in full output
  /// coordinates; rows of inactive points are zero.
  FunctionTable weighted_gradient(const Eigen::VectorXd& coef, const FunctionTable& phi) const;
  /// Value together with the weighted gradient.
  double weighted_value_and_gradient(const Eigen::VectorXd& coef, const FunctionTable& phi,
                                     FunctionTable* grad) const;
  FunctionTable loss_gradient(std::size_t i, const FunctionTable& phi) const;

  /// Value, reduced gradient and reduced Hessian of sum_i coef_i * raw_loss_i
  /// restricted to block `b` (variables ordered by point, then coordinate).
  double block_derivatives(std::size_t b, const Eigen::VectorXd& coef, const FunctionTable& phi,
                           Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const;
  /// Block-diagonal L2(pi) metric in reduced coordinates for block `b`.
  Eigen::MatrixXd block_metric(std::size_t b) const;
  /// Reduced direction at one point mapped back to full output coordinates.
  Eigen::VectorXd lift(const Eigen::VectorXd& reduced) const;
  Eigen::VectorXd reduce(const Eigen::VectorXd& full) const;

  /// Dual norm of a full-coordinate gradient table under the L2(pi) metric
  /// (tangent to the simplex when applicable).
  double dual_norm(const FunctionTable& grad) const;
  /// Gram matrix <grad l_i, grad l_j>_* over the constraints.
  Eigen::MatrixXd constraint_gram(const FunctionTable& phi) const;

  double l2_distance(const FunctionTable& a, const FunctionTable& b) const;

  /// Per-source-sample contributions to each raw loss excluding the
  /// Tikhonov term: rows are source samples, columns losses 0..m.
  Eigen::MatrixXd sample_contributions(const FunctionTable& phi) const;
  /// Tikhonov part of each raw loss.
  Eigen::VectorXd tikhonov_terms(const FunctionTable& phi) const;

  /// Same problem with constraints l(phi) + eps <= 0.
  Problem shifted(const Eigen::VectorXd& eps) const;

  /// Throws if the table shape is wrong or values leave the domain.
  void check_table(const FunctionTable& phi) const;

 private:
  struct PairTerm {
    std::size_t loss;
    std::size_t src;
    std::size_t img;
    double omega;
  };
  struct LossData {
    LossKind kind;
    double tau = 0.0;
    // Squared error: sum_j mass_j ||phi_j||^2 - 2 phi_j . s1_j + s2_j.
    Eigen::VectorXd mass;
    Eigen::MatrixXd s1;
    Eigen::VectorXd s2;
    // Cross-entropy: -sum_jk y_jk log p_jk.
    Eigen::MatrixXd counts;
    // Mean output: sum_j omega_j * scale * phi_jc.
    Eigen::VectorXd omega;
    double scale = 1.0;
    int component = 0;
    std::optional<std::size_t> transform;
    std::optional<GroupFilter> group;
    double group_mass = 1.0;
  };
  struct Compiled {
    ProblemSpec spec;
    Dataset dataset;
    int K = 1;
    int q = 1;
    std::vector<LossData> losses;
    std::vector<PairTerm> pairs;
    std::vector<std::size_t> active;
    std::vector<bool> active_mask;
    std::vector<std::vector<std::size_t>> blocks;
    std::vector<std::size_t> block_of;
    std::vector<std::size_t> local_index;
    std::vector<std::vector<std::size_t>> block_pairs;
    double mu0 = 0.0;
  };

  void compile();
  double point_unary(std::size_t j, const Eigen::VectorXd& coef, const Eigen::VectorXd& phi_j,
                     Eigen::VectorXd* g, Eigen::MatrixXd* h) const;
  double sample_loss(const LossData& L, std::size_t s, const FunctionTable& phi) const;

  std::shared_ptr<const Compiled> data_;
  Eigen::VectorXd levels_;
};

/// Weighted average of the pointwise loss minus the level (0 for the
/// objective). `constraint_index` is 1-based; nullopt selects the objective.
double empirical_risk(const Problem& problem, const FunctionTable& outputs,
                      std::optional<std::size_t> constraint_index = std::nullopt);

/// sqrt of the pi-weighted mean squared output difference.
double empirical_l2_distance(const FunctionTable& a, const FunctionTable& b, const Dataset& dataset);

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

}  // namespace duallearn
