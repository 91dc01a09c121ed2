// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "duallearn/certificates.hpp"
#include "duallearn/convex_reference.hpp"
#include "duallearn/harness.hpp"
#include "duallearn/io.hpp"
#include "duallearn/unparam.hpp"

using namespace duallearn;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = std::string(DUALLEARN_SOURCE_DIR) + "/scenarios";
const fs::path kOut = fs::path(DUALLEARN_BINARY_DIR) / "acceptance_out";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g(double v) { return fmt("%.3g", v); }

ScenarioConfig scenario(const std::string& name) { return load_scenario(kScenarios + "/" + name + ".json"); }

Problem problem_of(const ScenarioConfig& cfg) { return build_problem(cfg, prepare_data(cfg)); }

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(1.0, std::max(a.norm(), b.norm()));
}

ScenarioResult run(const ScenarioConfig& cfg, const std::string& dir, bool unconstrained = true) {
  fs::remove_all(kOut / dir);
  return run_scenario(cfg, (kOut / dir).string(), RunOptions{1, true, unconstrained});
}

// Results shared by several criteria.
struct Shared {
  std::optional<ScenarioResult> convex;
  std::optional<ScenarioResult> fairness;
  double fairness_seconds = 0.0;
};

Shared& shared() {
  static Shared s;
  return s;
}

const ScenarioResult& convex_result() {
  if (!shared().convex) shared().convex = run(scenario("convex_regression"), "convex_regression");
  return *shared().convex;
}

const ScenarioResult& fairness_result() {
  if (!shared().fairness) {
    const auto start = Clock::now();
    shared().fairness = run(scenario("fairness"), "fairness");
    shared().fairness_seconds = seconds_since(start);
  }
  return *shared().fairness;
}

const PredictorRow& predictor(const SeedRun& r, PredictorKind kind) {
  for (const PredictorRow& row : r.predictors) {
    if (row.kind == kind) return row;
  }
  throw std::runtime_error("missing predictor row");
}

// Central differences of the Lagrangian in every coordinate of theta.
double gradient_error(const ParamModel& model, const Problem& p, const Eigen::VectorXd& lambda) {
  const LagrangianGrad lg = lagrangian_and_grad(model, p, lambda);
  Eigen::VectorXd fd(model.theta.size());
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(model.theta[i]));
    ParamModel a = model, b = model;
    a.theta[i] += h;
    b.theta[i] -= h;
    fd[i] = (lagrangian_and_grad(a, p, lambda).value - lagrangian_and_grad(b, p, lambda).value) / (2 * h);
  }
  return rel(fd, lg.grad);
}

Outcome gradient_correctness() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> gauss(0.0, 0.5);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  struct Case {
    std::string kinds;
    Problem problem;
  };
  const ScenarioConfig fair = scenario("fairness_small");
  const ScenarioConfig reg = scenario("convex_regression");
  std::vector<Case> cases{{"cross_entropy+kl_pair", problem_of(fair)}, {"squared_error+mean_output", problem_of(reg)}};
  bool pass = true;
  std::string detail;
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
      ParamModel m = make_model(Arch::kMlp2, 4, c.problem, static_cast<std::uint64_t>(draw));
      for (Eigen::Index i = 0; i < m.theta.size(); ++i) m.theta[i] += gauss(rng);
      Eigen::VectorXd lambda(static_cast<Eigen::Index>(c.problem.num_constraints()));
      for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda[i] = unif(rng);
      worst = std::max(worst, gradient_error(m, c.problem, lambda));
    }
    pass = pass && worst <= 1e-5;
    detail += c.kinds + " max rel err " + g(worst) + "; ";
  }
  const double secs = seconds_since(start);
  pass = pass && secs < 30.0;
  return {pass, detail + "runtime " + fmt("%.1f", secs) + " s"};
}

Outcome unparam_strong_duality() {
  bool pass = true;
  std::string detail;
  for (const auto& entry : fs::directory_iterator(kScenarios)) {
    const std::string file = entry.path().filename().string();
    if (entry.path().extension() != ".json" || file.find("_problem") != std::string::npos) continue;
    const ScenarioConfig cfg = load_scenario(entry.path().string());
    const UnparamSolution s = solve_unparam_dual(problem_of(cfg), cfg.unparam);
    const double gap = std::abs(s.primal_value - s.dual_value);
    const double cs = s.kkt_residuals.cwiseAbs().maxCoeff();
    const bool ok = gap <= 1e-6 * (1 + std::abs(s.primal_value)) && cs <= 1e-6;
    pass = pass && ok;
    detail += cfg.name + " gap " + g(gap) + " cs " + g(cs) + "; ";
  }
  return {pass, detail};
}

Outcome dual_gradient_identity() {
  const auto start = Clock::now();
  const Problem p = problem_of(scenario("fairness_small"));
  const auto m = static_cast<Eigen::Index>(p.num_constraints());
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd lambda(m);
    for (Eigen::Index i = 0; i < m; ++i) lambda[i] = unif(rng);
    const FunctionTable phi = minimize_lagrangian_unparam(p, lambda);
    const Eigen::VectorXd slacks = p.slacks(phi);
    Eigen::VectorXd fd(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
      e[i] = 1e-5;
      fd[i] = (dual_function_unparam(p, lambda + e).value - dual_function_unparam(p, lambda - e).value) / 2e-5;
    }
    worst = std::max(worst, rel(fd, slacks));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-5 && secs < 60.0,
          "50 multipliers, m = " + std::to_string(m) + ", max rel err " + g(worst) + ", runtime " + fmt("%.1f", secs) + " s"};
}

Outcome dual_sandwich_check() {
  bool pass = true;
  std::string detail;
  {
    const ScenarioConfig cfg = scenario("convex_regression");
    const Problem p = problem_of(cfg);
    const ScenarioResult& res = convex_result();
    if (!res.ok() || !res.runs.front().certificates) return {false, "convex run failed: " + res.runs.front().error};
    const ConstantEstimates& c = res.runs.front().certificates->constants;
    std::vector<Eigen::VectorXd> grid;
    for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      for (double b : {0.0, 0.25, 0.5, 1.0}) grid.push_back(Eigen::Vector2d(a, b));
    }
    const auto rows = dual_sandwich(p, initial_model(cfg, p, 1), grid, c.M, c.nu, cfg.ascent.oracle);
    double lo = INFINITY, slack = INFINITY;
    for (const SandwichRow& r : rows) {
      lo = std::min(lo, r.g_p - r.g_u);
      slack = std::min(slack, r.upper + 1e-6 - (r.g_p - r.g_u));
    }
    pass = pass && lo >= 0.0 && slack >= 0.0;
    detail += "linear exact, 20 points: min gap " + g(lo) + ", min upper margin " + g(slack) + "; ";
  }
  {
    const ScenarioConfig cfg = scenario("fairness_small");
    const Problem p = problem_of(cfg);
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> unif(0.0, 2.0);
    std::vector<Eigen::VectorXd> grid;
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd l(static_cast<Eigen::Index>(p.num_constraints()));
      for (Eigen::Index i = 0; i < l.size(); ++i) l[i] = unif(rng);
      grid.push_back(l);
    }
    OracleConfig oracle;
    oracle.max_steps = 300;
    oracle.step_size = 0.5;
    const auto rows = dual_sandwich(p, make_model(Arch::kMlp2, 16, p, 1), grid, 0.0, 0.0, oracle);
    double lo = INFINITY;
    for (const SandwichRow& r : rows) lo = std::min(lo, r.g_p - r.g_u);
    pass = pass && lo >= 0.0;
    detail += "mlp2 oracle, 20 points: min gap " + g(lo);
  }
  return {pass, detail};
}

Outcome closed_form_kkt() {
  const ScenarioConfig cfg = scenario("closed_form");
  const UnparamSolution s = solve_unparam_dual(problem_of(cfg), cfg.unparam);
  const double el = std::abs(s.lambda_star[0] - 2.0);
  const double ep = std::abs(s.phi_star(0, 0));
  const double ev = std::abs(s.primal_value - 1.0);
  return {el <= 1e-8 && ep <= 1e-8 && ev <= 1e-8,
          "|lambda - 2| " + g(el) + ", |phi| " + g(ep) + ", |P - 1| " + g(ev)};
}

Outcome curvature_envelope() {
  bool pass = true;
  std::string detail;
  for (const std::string name : {"closed_form", "fairness_small"}) {
    const ScenarioResult res = run(scenario(name), name, false);
    if (!res.ok()) return {false, name + " failed: " + res.runs.front().error};
    const CertificateReport& rep = *res.runs.front().certificates;
    for (const std::string v : {"strong_concavity_envelope", "smoothness_envelope"}) {
      const Verdict* verdict = rep.find(v);
      const bool ok = verdict && verdict->status == VerdictStatus::kHolds && verdict->note != "degenerate segment";
      pass = pass && ok;
      if (verdict) detail += name + " " + v + " " + to_string(verdict->status) + " (" + g(verdict->observed) + " vs " + g(verdict->bound) + "); ";
    }
    detail += "mu_g_emp " + g(rep.assumptions_audit.at("mu_g_empirical")) + " beta_g_emp " +
              g(rep.assumptions_audit.at("beta_g_empirical")) + "; ";
  }
  return {pass, detail};
}

struct DeficitStats {
  double max_excess = -INFINITY;  // deficit - (eta S^2 / 2 + rho)
  double mean_term = 0.0;         // mean eta S^2 / 2
  double mean_deficit = 0.0;
};

DeficitStats deficits(const ScenarioResult& res, double eta) {
  DeficitStats d;
  for (const SeedRun& r : res.runs) {
    const Verdict* v = r.certificates->find("best_iterate_value");
    d.max_excess = std::max(d.max_excess, v->observed - v->bound);
    d.mean_term += eta * r.certificates->observations.s2 / 2.0 / static_cast<double>(res.runs.size());
    d.mean_deficit += v->observed / static_cast<double>(res.runs.size());
  }
  return d;
}

Outcome best_iterate_value() {
  const ScenarioResult& base = convex_result();
  if (!base.ok()) return {false, "convex run failed"};
  ScenarioConfig half = scenario("convex_regression");
  const double eta = half.ascent.eta;
  half.ascent.eta = eta / 2.0;
  const ScenarioResult halved = run(half, "convex_regression_half_eta", false);
  if (!halved.ok()) return {false, "halved-eta run failed"};
  const DeficitStats a = deficits(base, eta);
  const DeficitStats b = deficits(halved, eta / 2.0);
  const bool pass = base.runs.size() == 5 && a.max_excess <= 1e-3 && b.max_excess <= 1e-3 && b.mean_term < a.mean_term;
  return {pass, "5 seeds: max(deficit - bound) " + g(a.max_excess) + " at eta, " + g(b.max_excess) +
                    " at eta/2; mean eta S^2/2 " + g(a.mean_term) + " -> " + g(b.mean_term) + "; mean deficit " +
                    g(a.mean_deficit) + " -> " + g(b.mean_deficit)};
}

std::string verdict_counts(const ScenarioResult& res, bool* any_violated) {
  std::map<std::string, int> counts;
  for (const SeedRun& r : res.runs) {
    if (!r.certificates) {
      *any_violated = true;
      counts["missing"]++;
      continue;
    }
    for (const Verdict& v : r.certificates->verdicts) {
      counts[to_string(v.status)]++;
      if (v.status == VerdictStatus::kViolated) *any_violated = true;
    }
  }
  std::string s;
  for (const auto& [k, n] : counts) s += k + " " + std::to_string(n) + ", ";
  return s;
}

Outcome certificates_hold() {
  bool violated = false;
  std::string detail = "convex: " + verdict_counts(convex_result(), &violated);
  // Every verdict on the convex instance is evaluable.
  for (const SeedRun& r : convex_result().runs) {
    for (const Verdict& v : r.certificates->verdicts) {
      if (v.status == VerdictStatus::kNotEvaluated || v.status == VerdictStatus::kNotApplicable) violated = true;
    }
  }
  const ScenarioResult& fair = fairness_result();
  detail += "mlp2 fairness: " + verdict_counts(fair, &violated);
  return {!violated && convex_result().runs.size() == 5 && fair.runs.size() == 5, detail};
}

Outcome union_effect() {
  const ScenarioResult& res = fairness_result();
  bool pass = res.ok();
  std::string detail;
  for (const SeedRun& r : res.runs) {
    const OscillationStats& o = r.oscillation;
    const double per_max = *std::max_element(o.frequency.begin(), o.frequency.end());
    const int changes = *std::max_element(o.sign_changes.begin(), o.sign_changes.end());
    const bool ok = changes >= 2 && o.any_frequency > per_max;
    pass = pass && ok;
    detail += "seed " + std::to_string(r.seed) + ": settle " + std::to_string(o.settle_t) + ", any " +
              fmt("%.1f%%", 100 * o.any_frequency) + " vs max " + fmt("%.1f%%", 100 * per_max) + ", sign changes " +
              std::to_string(changes) + "; ";
  }
  return {pass, detail};
}

Outcome predictor_comparison() {
  const ScenarioResult& res = fairness_result();
  if (!res.ok()) return {false, "fairness run failed"};
  bool pass = true;
  double last_mean = 0.0, rand_mean = 0.0;
  std::string detail;
  for (const SeedRun& r : res.runs) {
    const PredictorRow& last = predictor(r, PredictorKind::kLast);
    const PredictorRow& unc = predictor(r, PredictorKind::kUnconstrained);
    const PredictorRow& rnd = predictor(r, PredictorKind::kRandomized);
    pass = pass && unc.accuracy >= last.accuracy && last.max_violation <= 0.5 * unc.max_violation;
    last_mean += last.max_violation / static_cast<double>(res.runs.size());
    rand_mean += rnd.max_violation / static_cast<double>(res.runs.size());
    detail += "seed " + std::to_string(r.seed) + ": acc unc " + fmt("%.4f", unc.accuracy) + " last " +
              fmt("%.4f", last.accuracy) + ", viol unc " + g(unc.max_violation) + " last " + g(last.max_violation) +
              " rand " + g(rnd.max_violation) + "; ";
  }
  const double ratio = std::max(last_mean, rand_mean) / std::max(1e-300, std::min(last_mean, rand_mean));
  pass = pass && ratio <= 2.0;
  return {pass, detail + "mean viol last " + g(last_mean) + " rand " + g(rand_mean) + " ratio " + g(ratio)};
}

Outcome capacity_trend() {
  const ScenarioConfig cfg = scenario("fairness");
  fairness_result();
  fs::remove_all(kOut / "fairness_sweep");
  const auto start = Clock::now();
  const SweepResult sw = capacity_sweep(cfg, *cfg.sweep, (kOut / "fairness_sweep").string());
  const double total = shared().fairness_seconds + seconds_since(start);
  std::string detail;
  for (const SweepSummaryRow& r : sw.summary) {
    detail += std::to_string(r.axis_value) + ": " + g(r.median_max_violation) + ", ";
  }
  const bool pass = sw.spearman && *sw.spearman <= -0.8 && total < 1800.0;
  return {pass, "median max violation by projection " + detail + "spearman " +
                    (sw.spearman ? fmt("%.3f", *sw.spearman) : std::string("skipped")) + ", pipeline " +
                    fmt("%.0f", total) + " s"};
}

Outcome determinism() {
  bool pass = true;
  std::string detail;
  for (const std::string name : {"smoke", "fairness"}) {
    ScenarioConfig cfg = scenario(name);
    cfg.seeds = {cfg.seeds.front()};
    cfg.certificates.enabled = false;
    const ScenarioResult a = run(cfg, name + "_det_a", false);
    const ScenarioResult b = run(cfg, name + "_det_b", false);
    const std::string rel = "seed_" + std::to_string(cfg.seeds.front()) + "/trace.csv";
    const bool same = a.ok() && b.ok() && sha256_file((kOut / (name + "_det_a") / rel).string()) ==
                                              sha256_file((kOut / (name + "_det_b") / rel).string());
    pass = pass && same;
    detail += name + " " + (same ? "identical" : "differs") + "; ";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> only(argv + 1, argv + argc);
  fs::create_directories(kOut);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_correctness", gradient_correctness},
      {"unparametrized_strong_duality", unparam_strong_duality},
      {"dual_gradient_identity", dual_gradient_identity},
      {"dual_sandwich", dual_sandwich_check},
      {"closed_form_kkt", closed_form_kkt},
      {"curvature_envelope", curvature_envelope},
      {"best_iterate_value", best_iterate_value},
      {"certificates_hold", certificates_hold},
      {"oscillation_union_effect", union_effect},
      {"predictor_comparison", predictor_comparison},
      {"capacity_violation_trend", capacity_trend},
      {"determinism", determinism},
  };
  int failed = 0;
  int run_count = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    ++run_count;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", run_count - failed, run_count);
  return failed == 0 ? 0 : 1;
}
