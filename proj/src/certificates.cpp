#include "duallearn/certificates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double l1(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<1>() : 0.0; }

const ParamModel& checkpoint_at(const DualTrace& trace, int t) {
  auto it = trace.checkpoints.find(t);
  if (it == trace.checkpoints.end()) throw StorageError("missing checkpoint for iteration " + std::to_string(t));
  return it->second;
}

// Largest |eigenvalue| of H against the metric G (both symmetric, G > 0).
double generalized_spectral_radius(const Eigen::MatrixXd& H, const Eigen::MatrixXd& G) {
  if (H.rows() == 1) return std::abs(H(0, 0) / G(0, 0));
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(H, G, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("generalized eigenproblem failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

bool all_declared(const ProblemSpec& spec, std::optional<double> DeclaredConstants::*field) {
  if (!(spec.objective.declared.*field)) return false;
  for (const ConstraintSpec& c : spec.constraints) {
    if (!(c.loss.declared.*field)) return false;
  }
  return true;
}

double max_declared(const ProblemSpec& spec, std::optional<double> DeclaredConstants::*field) {
  double v = *(spec.objective.declared.*field);
  for (const ConstraintSpec& c : spec.constraints) v = std::max(v, *(c.loss.declared.*field));
  return v;
}

}  // namespace

double mu_g_formula(double mu0, double sigma, double beta, double Delta) {
  if (beta <= 0.0) return kInf;
  const double d = beta * (1.0 + Delta);
  return mu0 * sigma * sigma / (d * d);
}

double beta_g_formula(int m, double M, double mu0) {
  if (mu0 <= 0.0) throw ConfigError("mu0 must be positive");
  return std::sqrt(static_cast<double>(m)) * M * M / mu0;
}

void derive_constants(ConstantEstimates& c) {
  c.Delta = std::max(c.lambda_u_norm, c.lambda_p_norm);
  c.mu_g = mu_g_formula(c.mu0, c.sigma, c.beta, c.Delta);
  c.beta_g = beta_g_formula(c.m, c.M, c.mu0);
  c.kappa0 = c.beta / c.mu0;
  c.kappa1 = c.sigma > 0.0 ? c.M / c.sigma : kInf;
}

double gamma1(const ConstantEstimates& c) { return c.M * c.nu * (1.0 + c.lambda_tilde_norm); }

double gamma2(const ConstantEstimates& c) {
  if (!c.licq) return kNaN;
  const double root = std::sqrt(2.0 * c.m * c.M * c.nu / c.mu0 * (1.0 + c.lambda_p_norm));
  return c.M * (1.0 + c.kappa1 * c.kappa0 * (1.0 + c.Delta)) * root;
}

double constraint_deviation_l2_bound(const ConstantEstimates& c) {
  const double f = 1.0 + std::sqrt(c.beta_g / c.mu_g);
  return 2.0 * c.beta_g * c.M * c.nu * (1.0 + c.lambda_p_norm) * f * f;
}

double dual_perturbation_bound(const ConstantEstimates& c) {
  return 2.0 * c.beta_g * c.beta_g / c.mu_g * c.M * c.nu * (1.0 + c.lambda_p_norm);
}

double parametrization_bound(const ConstantEstimates& c) {
  return 2.0 * c.beta_g * c.M * c.nu * (1.0 + c.lambda_p_norm);
}

double dual_distance_bound(const ConstantEstimates& c) {
  return 2.0 * c.M * c.nu / c.mu_g * (1.0 + c.lambda_p_norm);
}

double objective_deviation_bound(const ConstantEstimates& c) {
  return (1.0 + c.lambda_p_norm) * c.M * c.nu + gamma1(c) + c.lambda_p_norm * gamma2(c);
}

double best_iterate_bound(const ConstantEstimates& c, double lambda_best_norm, double ascent_slack) {
  const double mu_tilde = mu_g_formula(c.mu0, c.sigma, c.beta, std::max(c.lambda_u_norm, lambda_best_norm));
  const double f = 1.0 + std::sqrt(c.beta_g / mu_tilde);
  return 2.0 * c.beta_g * (c.M * c.nu * (1.0 + lambda_best_norm) + ascent_slack) * f * f;
}

ProbeSet build_probe_set(const std::vector<FunctionTable>& anchors, int probe_count, std::uint64_t seed) {
  if (anchors.empty()) throw ConfigError("probe set needs at least one anchor");
  ProbeSet set;
  set.anchors = anchors;
  set.probes = anchors;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, anchors.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(set.probes.size()) < probe_count) {
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    const double s = unit(rng);
    set.probes.push_back((1.0 - s) * anchors[a] + s * anchors[b]);
  }
  return set;
}

double estimate_lipschitz(const Problem& problem, const std::vector<FunctionTable>& probes) {
  double M = 0.0;
  for (const FunctionTable& phi : probes) {
    for (std::size_t i = 0; i <= problem.num_constraints(); ++i) {
      M = std::max(M, problem.dual_norm(problem.loss_gradient(i, phi)));
    }
  }
  return M;
}

double estimate_smoothness(const Problem& problem, const std::vector<FunctionTable>& probes) {
  const std::size_t n_losses = problem.num_constraints() + 1;
  const auto& blocks = problem.blocks();
  std::vector<Eigen::MatrixXd> metrics;
  metrics.reserve(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) metrics.push_back(problem.block_metric(b));
  double beta = 0.0;
  Eigen::MatrixXd H;
  for (const FunctionTable& phi : probes) {
    for (std::size_t i = 0; i < n_losses; ++i) {
      const Eigen::VectorXd coef = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(n_losses), static_cast<Eigen::Index>(i));
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        problem.block_derivatives(b, coef, phi, nullptr, &H);
        beta = std::max(beta, generalized_spectral_radius(H, metrics[b]));
      }
    }
  }
  return beta;
}

double estimate_sigma(const Problem& problem, const FunctionTable& phi) {
  const Eigen::MatrixXd gram = problem.constraint_gram(phi);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
}

NuEstimate estimate_nu(const Problem& problem, const ParamModel& warm, const Eigen::VectorXd& lambda_u,
                       const Eigen::VectorXd& lambda_p, const ProbeConfig& cfg) {
  NuEstimate out;
  const int segments = std::max(0, cfg.lambda_grid) + 1;
  const bool same = (lambda_u - lambda_p).lpNorm<Eigen::Infinity>() == 0.0;
  FunctionTable prev;
  for (int k = 0; k <= segments; ++k) {
    if (same && k > 0) break;
    const double s = static_cast<double>(k) / segments;
    const Eigen::VectorXd lam = (1.0 - s) * lambda_u + s * lambda_p;
    const FunctionTable target = minimize_lagrangian_unparam(problem, lam, prev.size() ? &prev : nullptr);
    FitResult fit = fit_to_targets(target, warm, cfg.fit, problem);
    out.residuals.push_back(fit.residual);
    out.fits.push_back(forward_active(fit.model, problem));
    out.nu = std::max(out.nu, fit.residual);
    prev = target;
  }
  return out;
}

ConstantEstimates estimate_constants(const CertificateContext& ctx, const ProbeConfig& cfg, NuEstimate* nu_out) {
  if (!ctx.problem || !ctx.unparam || !ctx.trace) throw ConfigError("certificate context is incomplete");
  const Problem& problem = *ctx.problem;
  const UnparamSolution& un = *ctx.unparam;
  const DualTrace& trace = *ctx.trace;
  if (cfg.probe_count < 1) throw ConfigError("probe count must be positive");
  if (trace.records.empty()) throw StorageError("trace is empty");

  ConstantEstimates c;
  c.m = static_cast<int>(problem.num_constraints());
  const Eigen::VectorXd lambda_p = ctx.exact ? ctx.exact->lambda_star : trace.at(trace.best_index).lambda;
  c.lambda_u_norm = l1(un.lambda_star);
  c.lambda_p_norm = l1(lambda_p);
  c.provenance["lambda_p_norm"] = ctx.exact ? "exact" : "best-iterate surrogate";

  const ParamModel& warm = ctx.exact ? ctx.exact->model : checkpoint_at(trace, trace.best_index);
  NuEstimate nu = estimate_nu(problem, warm, un.lambda_star, lambda_p, cfg);
  c.nu = nu.nu;
  c.provenance["nu"] = "probe-estimated";

  std::vector<FunctionTable> anchors{un.phi_star, minimize_lagrangian_unparam(problem, lambda_p, &un.phi_star)};
  for (const FunctionTable& f : nu.fits) anchors.push_back(f);
  anchors.push_back(forward_active(warm, problem));
  anchors.push_back(forward_active(checkpoint_at(trace, trace.length()), problem));
  const ProbeSet probes = build_probe_set(anchors, cfg.probe_count, cfg.seed);

  const ProblemSpec& spec = problem.spec();
  if (all_declared(spec, &DeclaredConstants::M)) {
    c.M = max_declared(spec, &DeclaredConstants::M);
    c.provenance["M"] = "declared";
  } else {
    c.M = estimate_lipschitz(problem, probes.probes);
    c.provenance["M"] = "probe-estimated";
  }
  if (all_declared(spec, &DeclaredConstants::beta)) {
    c.beta = max_declared(spec, &DeclaredConstants::beta);
    c.provenance["beta"] = "declared";
  } else {
    c.beta = estimate_smoothness(problem, probes.probes);
    c.provenance["beta"] = "probe-estimated";
  }
  if (spec.objective.declared.mu) {
    c.mu0 = *spec.objective.declared.mu;
    c.provenance["mu0"] = "declared";
  } else {
    c.mu0 = problem.mu0();
    c.provenance["mu0"] = "analytic";
  }
  c.sigma = estimate_sigma(problem, un.phi_star);
  c.licq = c.sigma >= 1e-10;
  c.provenance["sigma"] = "analytic";
  derive_constants(c);
  if (nu_out) *nu_out = std::move(nu);
  return c;
}

const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::kHolds: return "holds";
    case VerdictStatus::kHoldsVacuous: return "holds (vacuous)";
    case VerdictStatus::kViolated: return "violated";
    case VerdictStatus::kNotApplicable: return "not applicable";
    case VerdictStatus::kNotEvaluated: return "not evaluated";
  }
  return "unknown";
}

Verdict make_verdict(const std::string& name, double observed, double bound, double range, double vacuity_factor,
                     bool applicable, const std::string& note) {
  Verdict v;
  v.name = name;
  v.observed = observed;
  v.bound = bound;
  v.range = range;
  v.note = note;
  if (!applicable) {
    v.status = VerdictStatus::kNotApplicable;
    v.margin = kNaN;
    return v;
  }
  if (!std::isfinite(observed) || std::isnan(bound)) {
    v.status = VerdictStatus::kNotEvaluated;
    v.margin = kNaN;
    return v;
  }
  v.margin = bound - observed;
  const double tol = 1e-9 * (1.0 + std::abs(bound));
  if (observed > bound + tol) {
    v.status = VerdictStatus::kViolated;
  } else if (bound > vacuity_factor * range) {
    v.status = VerdictStatus::kHoldsVacuous;
  } else {
    v.status = VerdictStatus::kHolds;
  }
  return v;
}

bool CertificateReport::any_violated() const {
  return std::any_of(verdicts.begin(), verdicts.end(),
                     [](const Verdict& v) { return v.status == VerdictStatus::kViolated; });
}

const Verdict* CertificateReport::find(const std::string& name) const {
  for (const Verdict& v : verdicts) {
    if (v.name == name) return &v;
  }
  return nullptr;
}

std::optional<double> best_feasible_objective(const DualTrace& trace, double tol) {
  std::optional<double> best;
  for (const TraceRecord& r : trace.records) {
    if (r.slacks.size() && r.slacks.maxCoeff() > tol) continue;
    if (!best || r.objective < *best) best = r.objective;
  }
  return best;
}

double tilted_lambda_norm_exact(const Problem& problem, const ParamModel& family, double tilt) {
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  DualOracle oracle = [&](const Eigen::VectorXd& lambda, bool want_hessian) {
    ExactDualPoint p = exact_family_dual(problem, family, lambda, want_hessian);
    DualPoint out;
    out.value = p.value + tilt * lambda.sum();
    out.grad = p.grad.array() + tilt;
    out.hess = std::move(p.hess);
    return out;
  };
  const DualAscentResult res = maximize_concave_dual(oracle, Eigen::VectorXd::Zero(m), DualAscentConfig{});
  return l1(res.lambda);
}

double tilted_lambda_norm(const DualTrace& tilted) {
  if (tilted.records.empty()) throw StorageError("tilted trace is empty");
  double best = -kInf;
  double norm = 0.0;
  for (int t = std::min(tilted.t0, tilted.length()); t <= tilted.length(); ++t) {
    const TraceRecord& r = tilted.at(t);
    const double v = r.lagrangian + tilted.tilt * l1(r.lambda);
    if (v > best) {
      best = v;
      norm = l1(r.lambda);
    }
  }
  return norm;
}

CertificateReport verify_bounds(const CertificateContext& ctx, const ConstantEstimates& constants,
                                const ProbeConfig& cfg) {
  if (!ctx.problem || !ctx.unparam || !ctx.trace) throw ConfigError("certificate context is incomplete");
  const Problem& problem = *ctx.problem;
  const UnparamSolution& un = *ctx.unparam;
  const DualTrace& trace = *ctx.trace;
  if (trace.records.empty()) throw StorageError("trace is empty");

  CertificateReport rep;
  rep.constants = constants;
  const ConstantEstimates& c = rep.constants;
  Observations& ob = rep.observations;
  const double vf = cfg.vacuity_factor;
  const int T = trace.length();
  const TraceRecord& best = trace.at(trace.best_index);

  ob.exact_reference = ctx.exact.has_value();
  ob.slacks_phi_star = un.slacks;
  if (ctx.exact) {
    ob.lambda_p = ctx.exact->lambda_star;
    const FunctionTable fp = forward_active(ctx.exact->model, problem);
    const Eigen::VectorXd raw = problem.raw_losses(fp);
    ob.objective_f_p = raw[0];
    ob.slacks_f_p = raw.tail(c.m) - problem.levels();
    ob.primal_p = ctx.exact->primal_value;
    ob.dual_p = ctx.exact->dual_value;
  } else {
    ob.lambda_p = best.lambda;
    ob.objective_f_p = best.objective;
    ob.slacks_f_p = best.slacks;
    ob.primal_p = best_feasible_objective(trace);
    ob.dual_p = best.lagrangian;
    rep.notes.push_back("lambda_p is the best-iterate dual vector; certificates are heuristic for this family");
    rep.notes.push_back("P*_p is approximated by the best feasible-within-tolerance objective; objective certificate is advisory");
  }
  const FunctionTable phi_p = minimize_lagrangian_unparam(problem, ob.lambda_p, &un.phi_star);
  ob.slacks_phi_p = problem.slacks(phi_p);
  ob.constraint_deviation_inf = (ob.slacks_f_p - ob.slacks_phi_star).lpNorm<Eigen::Infinity>();
  ob.constraint_deviation_l2sq = (ob.slacks_f_p - ob.slacks_phi_star).squaredNorm();
  ob.dual_perturbation_l2sq = (ob.slacks_phi_p - ob.slacks_phi_star).squaredNorm();
  ob.parametrization_l2sq = (ob.slacks_phi_p - ob.slacks_f_p).squaredNorm();
  ob.dual_distance_sq = (ob.lambda_p - un.lambda_star).squaredNorm();
  ob.s2 = trace.s2_estimate;

  // rho: exact on convex families, otherwise bounded above through g_u <= g_p.
  double rho = 0.0;
  if (ctx.exact) {
    for (const TraceRecord& r : trace.records) {
      rho = std::max(rho, r.lagrangian - exact_family_dual(problem, ctx.exact->model, r.lambda).value);
    }
    ob.rho_source = "exact";
    ob.best_value = exact_family_dual(problem, ctx.exact->model, best.lambda).value;
  } else {
    const int stride = std::max(1, cfg.rho_stride);
    std::vector<int> times;
    for (int t = std::min(trace.t0, T); t <= T; t += stride) times.push_back(t);
    times.push_back(trace.best_index);
    FunctionTable warm = un.phi_star;
    for (int t : times) {
      const TraceRecord& r = trace.at(t);
      FunctionTable phi;
      const DualPoint g = dual_point_unparam(problem, r.lambda, false, &phi, &warm);
      rho = std::max(rho, r.lagrangian - g.value);
      warm = std::move(phi);
    }
    ob.rho_source = "upper bound via unparametrized dual";
    ob.best_value = best.lagrangian;
  }
  ob.rho = rho;
  const double ascent_slack = trace.eta * ob.s2 / 2.0 + rho;

  // Dynamic ranges over the trace.
  double range_inf = 0.0, range_l2 = 0.0, range_param = 0.0, range_dual = 0.0, range_obj = 0.0;
  const double p_ref = ob.primal_p.value_or(ob.objective_f_p);
  for (const TraceRecord& r : trace.records) {
    range_inf = std::max(range_inf, (r.slacks - ob.slacks_phi_star).lpNorm<Eigen::Infinity>());
    range_l2 = std::max(range_l2, (r.slacks - ob.slacks_phi_star).squaredNorm());
    range_param = std::max(range_param, (r.slacks - ob.slacks_phi_p).squaredNorm());
    range_dual = std::max(range_dual, (r.lambda - un.lambda_star).squaredNorm());
    range_obj = std::max(range_obj, std::abs(r.objective - p_ref));
  }

  rep.gamma1 = gamma1(c);
  rep.gamma2 = gamma2(c);
  const bool licq = c.licq;
  const std::string licq_note = licq ? std::string{} : "constraint Jacobian is rank deficient";

  if (ob.primal_p && ob.dual_p) {
    const double gap = *ob.primal_p - *ob.dual_p;
    rep.verdicts.push_back(make_verdict("duality_gap", gap, rep.gamma1, range_obj, vf, true,
                                        ob.exact_reference ? "" : "advisory: proxy primal and dual values"));
  } else {
    rep.verdicts.push_back({"duality_gap", VerdictStatus::kNotEvaluated, kNaN, rep.gamma1, kNaN, range_obj,
                            "no feasible-within-tolerance iterate"});
  }
  rep.verdicts.push_back(
      make_verdict("constraint_deviation", ob.constraint_deviation_inf, rep.gamma2, range_inf, vf, licq, licq_note));
  if (ob.primal_p) {
    rep.verdicts.push_back(make_verdict("objective_deviation", std::abs(*ob.primal_p - ob.objective_f_p),
                                        objective_deviation_bound(c), range_obj, vf, licq,
                                        licq ? (ob.exact_reference ? "" : "advisory: proxy primal value") : licq_note));
  } else {
    rep.verdicts.push_back({"objective_deviation", VerdictStatus::kNotEvaluated, kNaN, kNaN, kNaN, range_obj,
                            "no feasible-within-tolerance iterate"});
  }
  rep.verdicts.push_back(make_verdict("constraint_deviation_l2", ob.constraint_deviation_l2sq,
                                      licq ? constraint_deviation_l2_bound(c) : kNaN, range_l2, vf, licq, licq_note));
  rep.verdicts.push_back(make_verdict("lagrangian_minimizer_deviation", ob.dual_perturbation_l2sq,
                                      licq ? dual_perturbation_bound(c) : kNaN, range_l2, vf, licq, licq_note));
  rep.verdicts.push_back(make_verdict("parametrization_deviation", ob.parametrization_l2sq, parametrization_bound(c),
                                      range_param, vf));
  rep.verdicts.push_back(make_verdict("dual_distance", ob.dual_distance_sq, licq ? dual_distance_bound(c) : kNaN,
                                      range_dual, vf, licq, licq_note));

  const double best_norm = l1(best.lambda);
  const double best_obs = (best.slacks - ob.slacks_phi_star).squaredNorm();
  rep.verdicts.push_back(make_verdict("best_iterate_deviation", best_obs,
                                      licq ? best_iterate_bound(c, best_norm, ascent_slack) : kNaN, range_l2, vf, licq,
                                      licq ? "rho source: " + ob.rho_source : licq_note));
  if (ctx.exact) {
    const double deficit = ctx.exact->dual_value - ob.best_value;
    double range_value = 0.0;
    for (const TraceRecord& r : trace.records) range_value = std::max(range_value, std::abs(ctx.exact->dual_value - r.lagrangian));
    rep.verdicts.push_back(make_verdict("best_iterate_value", deficit, ascent_slack, range_value, vf));
  } else {
    rep.verdicts.push_back({"best_iterate_value", VerdictStatus::kNotEvaluated, kNaN, ascent_slack, kNaN, 0.0,
                            "needs the exact parametrized dual optimum"});
  }

  const CurvatureAudit audit = curvature_audit(problem, un.lambda_star, ob.lambda_p);
  rep.assumptions_audit["mu_g_empirical"] = audit.mu_g_empirical;
  rep.assumptions_audit["beta_g_empirical"] = audit.beta_g_empirical;
  if (audit.degenerate) {
    rep.verdicts.push_back({"strong_concavity_envelope", VerdictStatus::kHolds, 0.0, 0.0, 0.0, 0.0,
                            "degenerate segment"});
    rep.verdicts.push_back({"smoothness_envelope", VerdictStatus::kHolds, 0.0, 0.0, 0.0, 0.0, "degenerate segment"});
  } else {
    // The formula value must not exceed the measured modulus (5% slack).
    rep.verdicts.push_back(make_verdict("strong_concavity_envelope", c.mu_g, 1.05 * audit.mu_g_empirical, kInf, vf,
                                        licq, licq_note));
    rep.verdicts.push_back(make_verdict("smoothness_envelope", audit.beta_g_empirical, 1.05 * c.beta_g, kInf, vf));
    if (audit.shortened) {
      for (std::size_t k = rep.verdicts.size() - 2; k < rep.verdicts.size(); ++k) {
        if (rep.verdicts[k].note.empty()) rep.verdicts[k].note = "segment endpoints coincide; measured toward lambda_u / 2";
      }
    }
  }

  if (un.slater_witness_slacks) rep.assumptions_audit["slater_max_slack"] = un.slater_witness_slacks->maxCoeff();
  rep.assumptions_audit["sigma"] = c.sigma;
  rep.assumptions_audit["mu0"] = c.mu0;
  rep.assumptions_audit["nu"] = c.nu;
  rep.assumptions_audit["rho"] = rho;
  rep.assumptions_audit["s2"] = ob.s2;
  rep.assumptions_audit["probe_count"] = cfg.probe_count;
  rep.assumptions_audit["best_gap_surrogate"] = best.gap_surrogate;
  if (c.provenance.count("M") && c.provenance.at("M") == "probe-estimated") {
    rep.notes.push_back("M and beta are probe-calibrated lower estimates of their suprema");
  }
  if (!licq) rep.notes.push_back("LICQ fails: sigma below 1e-10; dependent certificates are not applicable");
  return rep;
}

CurvatureAudit curvature_audit(const Problem& problem, const Eigen::VectorXd& lambda_a, const Eigen::VectorXd& lambda_b,
                               int points) {
  if ((lambda_a.array() < 0.0).any() || (lambda_b.array() < 0.0).any()) {
    throw ConfigError("segment endpoints must be nonnegative");
  }
  CurvatureAudit out;
  Eigen::VectorXd end = lambda_b;
  if ((end - lambda_a).norm() <= 1e-6 * (1.0 + lambda_a.norm())) {
    if (lambda_a.lpNorm<1>() <= 1e-6) {
      out.degenerate = true;
      return out;
    }
    end = 0.5 * lambda_a;
    out.shortened = true;
  }
  points = std::max(points, 2);
  std::vector<Eigen::VectorXd> lams, grads;
  FunctionTable warm;
  for (int k = 0; k < points; ++k) {
    const double s = static_cast<double>(k) / (points - 1);
    out.gammas.push_back(s);
    lams.push_back((1.0 - s) * lambda_a + s * end);
    FunctionTable phi;
    grads.push_back(dual_point_unparam(problem, lams.back(), false, &phi, warm.size() ? &warm : nullptr).grad);
    warm = std::move(phi);
  }
  out.mu_g_empirical = kInf;
  for (int k = 1; k < points; ++k) {
    const Eigen::VectorXd d = lams[k] - lams[0];
    out.mu_g_empirical = std::min(out.mu_g_empirical, -(grads[k] - grads[0]).dot(d) / d.squaredNorm());
  }
  for (int i = 0; i < points; ++i) {
    for (int j = i + 1; j < points; ++j) {
      const double dl = (lams[j] - lams[i]).norm();
      out.beta_g_empirical = std::max(out.beta_g_empirical, (grads[j] - grads[i]).norm() / dl);
    }
  }
  return out;
}

std::vector<SandwichRow> dual_sandwich(const Problem& problem, const ParamModel& warm,
                                       const std::vector<Eigen::VectorXd>& lambdas, double M, double nu,
                                       const OracleConfig& oracle) {
  const bool exact = supports_exact_reference(problem, warm);
  std::vector<SandwichRow> rows;
  ParamModel start = warm;
  FunctionTable phi_warm;
  for (const Eigen::VectorXd& lam : lambdas) {
    SandwichRow row;
    row.lambda = lam;
    if (exact) {
      row.g_p = exact_family_dual(problem, warm, lam).value;
    } else {
      OracleResult res = primal_oracle(problem, lam, oracle, start);
      row.g_p = res.lagrangian;
      start = std::move(res.model);
    }
    FunctionTable phi;
    row.g_u = dual_point_unparam(problem, lam, false, &phi, phi_warm.size() ? &phi_warm : nullptr).value;
    phi_warm = std::move(phi);
    row.upper = M * nu * (1.0 + l1(lam));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_text(const CertificateReport& r) {
  std::ostringstream os;
  char buf[256];
  const ConstantEstimates& c = r.constants;
  os << "constants\n";
  auto line = [&](const char* name, double v, const std::string& prov) {
    std::snprintf(buf, sizeof buf, "  %-18s %.6g%s%s\n", name, v, prov.empty() ? "" : "  ", prov.c_str());
    os << buf;
  };
  auto prov = [&](const char* key) { return c.provenance.count(key) ? "[" + c.provenance.at(key) + "]" : std::string{}; };
  line("M", c.M, prov("M"));
  line("beta", c.beta, prov("beta"));
  line("mu0", c.mu0, prov("mu0"));
  line("sigma", c.sigma, prov("sigma"));
  line("nu", c.nu, prov("nu"));
  line("Delta", c.Delta, "");
  line("mu_g", c.mu_g, "");
  line("beta_g", c.beta_g, "");
  line("kappa0", c.kappa0, "");
  line("kappa1", c.kappa1, "");
  line("||lambda_u||_1", c.lambda_u_norm, "");
  line("||lambda_p||_1", c.lambda_p_norm, prov("lambda_p_norm"));
  line("||lambda~||_1", c.lambda_tilde_norm, "");
  line("gamma1", r.gamma1, "");
  line("gamma2", r.gamma2, "");
  os << "verdicts\n";
  for (const Verdict& v : r.verdicts) {
    std::snprintf(buf, sizeof buf, "  %-32s %-16s observed %-12.6g bound %-12.6g", v.name.c_str(), to_string(v.status),
                  v.observed, v.bound);
    os << buf;
    if (!v.note.empty()) os << "  (" << v.note << ")";
    os << "\n";
  }
  if (!r.notes.empty()) {
    os << "notes\n";
    for (const std::string& n : r.notes) os << "  - " << n << "\n";
  }
  return os.str();
}

}  // namespace duallearn
