#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallearn/convex_reference.hpp"
#include "duallearn/dual_engine.hpp"
#include "duallearn/models.hpp"
#include "duallearn/problem.hpp"
#include "duallearn/unparam.hpp"

namespace duallearn {

struct ConstantEstimates {
  int m = 0;
  double M = 0.0;
  double beta = 0.0;
  double mu0 = 0.0;
  double sigma = 0.0;
  double nu = 0.0;
  double Delta = 0.0;
  double mu_g = 0.0;
  double beta_g = 0.0;
  double kappa0 = 0.0;
  double kappa1 = 0.0;
  double lambda_u_norm = 0.0;
  double lambda_p_norm = 0.0;
  double lambda_tilde_norm = 0.0;
  bool licq = true;
  std::map<std::string, std::string> provenance;
};

double mu_g_formula(double mu0, double sigma, double beta, double Delta);
double beta_g_formula(int m, double M, double mu0);

/// Recomputes mu_g, beta_g, kappa0, kappa1 and Delta from the primitives.
void derive_constants(ConstantEstimates& c);

/// M nu (1 + ||lambda_tilde||_1).
double gamma1(const ConstantEstimates& c);
/// M [1 + kappa1 kappa0 (1 + Delta)] sqrt(2 m M nu / mu0 (1 + ||lambda_p||_1)).
/// NaN when the Jacobian rank condition fails.
double gamma2(const ConstantEstimates& c);

/// Bound on ||l(f(lambda_p)) - l(phi*)||_2^2.
double constraint_deviation_l2_bound(const ConstantEstimates& c);
/// Bound on ||l(phi(lambda_p)) - l(phi*)||_2^2.
double dual_perturbation_bound(const ConstantEstimates& c);
/// Bound on ||l(phi(lambda_p)) - l(f(lambda_p))||_2^2.
double parametrization_bound(const ConstantEstimates& c);
/// Bound on ||lambda_p - lambda_u||_2^2.
double dual_distance_bound(const ConstantEstimates& c);
/// Bound on |P*_p - l0(f(lambda_p))|.
double objective_deviation_bound(const ConstantEstimates& c);
/// Bound on ||l(phi*) - l(f(lambda_best))||_2^2 given the ascent slack
/// eta S^2 / 2 + rho.
double best_iterate_bound(const ConstantEstimates& c, double lambda_best_norm, double ascent_slack);

struct ProbeConfig {
  int probe_count = 200;
  std::uint64_t seed = 0;
  int lambda_grid = 3;  // interior points on the segment for nu
  OracleConfig fit;     // descent settings for fits of non-linear families
  double vacuity_factor = 10.0;
  int rho_stride = 10;  // stride over [t0, T] when bounding rho by g_u
};

struct ProbeSet {
  std::vector<FunctionTable> anchors;
  std::vector<FunctionTable> probes;  // anchors first, then random segment points
};

/// Anchors plus seeded random points on segments between anchor pairs.
ProbeSet build_probe_set(const std::vector<FunctionTable>& anchors, int probe_count, std::uint64_t seed);

/// max_i sup over probes of the dual norm of grad l_i (i = 0..m).
double estimate_lipschitz(const Problem& problem, const std::vector<FunctionTable>& probes);
/// max_i sup over probes of the largest generalized eigenvalue of the
/// Hessian of l_i against the L2(pi) metric.
double estimate_smoothness(const Problem& problem, const std::vector<FunctionTable>& probes);
/// Smallest singular value of the constraint Jacobian at phi in L2(pi).
double estimate_sigma(const Problem& problem, const FunctionTable& phi);

struct NuEstimate {
  double nu = 0.0;
  std::vector<double> residuals;
  std::vector<FunctionTable> fits;  // fitted model outputs, same order
};

/// Fit residuals of the family against phi(lambda) for lambda on the segment
/// [lambda_u, lambda_p] (endpoints included).
NuEstimate estimate_nu(const Problem& problem, const ParamModel& warm, const Eigen::VectorXd& lambda_u,
                       const Eigen::VectorXd& lambda_p, const ProbeConfig& cfg);

struct CertificateContext {
  const Problem* problem = nullptr;
  const UnparamSolution* unparam = nullptr;
  const DualTrace* trace = nullptr;
  ParamModel family;  // model template, also the warm start for fits
  std::optional<ExactFamilySolution> exact;  // convex linear instances only
};

/// Estimates all constants except lambda_tilde_norm (set by the caller after
/// the tilted ascent; see gamma1).
ConstantEstimates estimate_constants(const CertificateContext& ctx, const ProbeConfig& cfg,
                                     NuEstimate* nu_out = nullptr);

enum class VerdictStatus { kHolds, kHoldsVacuous, kViolated, kNotApplicable, kNotEvaluated };
const char* to_string(VerdictStatus s);

struct Verdict {
  std::string name;
  VerdictStatus status = VerdictStatus::kNotEvaluated;
  double observed = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // bound - observed
  double range = 0.0;   // observed dynamic range of the quantity over the trace
  std::string note;
};

/// observed <= bound (+ tolerance) decides holds/violated; a holding bound
/// above vacuity_factor * range is flagged vacuous.
Verdict make_verdict(const std::string& name, double observed, double bound, double range, double vacuity_factor,
                     bool applicable = true, const std::string& note = {});

struct Observations {
  Eigen::VectorXd lambda_p;
  Eigen::VectorXd slacks_phi_star;
  Eigen::VectorXd slacks_f_p;       // l(f_theta(lambda_p))
  Eigen::VectorXd slacks_phi_p;     // l(phi(lambda_p))
  double objective_f_p = 0.0;
  double constraint_deviation_inf = 0.0;
  double constraint_deviation_l2sq = 0.0;
  double dual_perturbation_l2sq = 0.0;
  double parametrization_l2sq = 0.0;
  double dual_distance_sq = 0.0;
  std::optional<double> primal_p;  // P*_p (exact) or best feasible objective
  std::optional<double> dual_p;    // D*_p (exact) or best recorded Lagrangian
  bool exact_reference = false;
  double rho = 0.0;
  std::string rho_source;
  double s2 = 0.0;
  double best_value = 0.0;
};

struct CertificateReport {
  ConstantEstimates constants;
  Observations observations;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  std::vector<Verdict> verdicts;
  std::map<std::string, double> assumptions_audit;
  std::vector<std::string> notes;

  bool any_violated() const;
  const Verdict* find(const std::string& name) const;
};

/// Evaluates every bound with the given constants.
CertificateReport verify_bounds(const CertificateContext& ctx, const ConstantEstimates& constants, const ProbeConfig& cfg);

struct CurvatureAudit {
  double mu_g_empirical = 0.0;
  double beta_g_empirical = 0.0;
  bool degenerate = false;
  bool shortened = false;  // endpoints coincided; measured on [lambda_a / 2, lambda_a]
  std::vector<double> gammas;
};

/// Empirical strong concavity (pairs against lambda_a) and smoothness (all
/// pairs) of g_u on the segment [lambda_a, lambda_b]. When the endpoints
/// coincide the segment toward lambda_a / 2 is used instead, which stays in
/// the l1 ball the curvature formulas cover; a zero lambda_a is degenerate.
CurvatureAudit curvature_audit(const Problem& problem, const Eigen::VectorXd& lambda_a, const Eigen::VectorXd& lambda_b,
                               int points = 9);

struct SandwichRow {
  Eigen::VectorXd lambda;
  double g_p = 0.0;  // exact, or the oracle's achieved value
  double g_u = 0.0;
  double upper = 0.0;  // M nu (1 + ||lambda||_1)
};

/// g_p - g_u along a lambda grid. Uses the exact family dual when available,
/// otherwise the oracle started from `warm`.
std::vector<SandwichRow> dual_sandwich(const Problem& problem, const ParamModel& warm,
                                       const std::vector<Eigen::VectorXd>& lambdas, double M, double nu,
                                       const OracleConfig& oracle);

/// Best feasible-within-tolerance objective over the trace (nullopt if none).
std::optional<double> best_feasible_objective(const DualTrace& trace, double tol = 1e-4);

/// ||lambda~||_1 for lambda~ maximizing g_p(lambda) + tilt * ||lambda||_1 on
/// a linear family, computed exactly.
double tilted_lambda_norm_exact(const Problem& problem, const ParamModel& family, double tilt);

/// ||lambda||_1 at the best iterate of a tilted ascent run, ranking
/// iterates by recorded Lagrangian + tilt * ||lambda||_1.
double tilted_lambda_norm(const DualTrace& tilted_trace);

std::string render_text(const CertificateReport& report);

}  // namespace duallearn
