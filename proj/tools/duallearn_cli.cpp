#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "duallearn/errors.hpp"
#include "duallearn/harness.hpp"

namespace fs = std::filesystem;
using namespace duallearn;

namespace {

constexpr int kExitViolated = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct GlobalOptions {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 1;
};

ScenarioConfig load(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  ScenarioConfig cfg = load_scenario(g.config);
  if (g.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(g.seed)};
  return cfg;
}

std::string out_dir(const GlobalOptions& g, const ScenarioConfig& cfg) {
  if (!g.out.empty()) return g.out;
  if (!cfg.output.empty()) return cfg.output;
  return "out/" + cfg.name;
}

void print_run_summary(const ScenarioResult& result, bool certificates) {
  std::printf("P*_u = %.10g  D*_u = %.10g  lambda*_u =", result.unparam.primal_value, result.unparam.dual_value);
  for (Eigen::Index i = 0; i < result.unparam.lambda_star.size(); ++i) std::printf(" %.6g", result.unparam.lambda_star[i]);
  std::printf("\n");
  for (const SeedRun& run : result.runs) {
    if (!run.error.empty()) {
      std::printf("seed %llu: failed during %s: %s\n", static_cast<unsigned long long>(run.seed),
                  run.error_stage.c_str(), run.error.c_str());
      continue;
    }
    const OscillationStats& o = run.oscillation;
    std::printf("seed %llu: settle_t %d, any-violated %.3f, per-constraint", static_cast<unsigned long long>(run.seed),
                o.settle_t, o.any_frequency);
    for (double f : o.frequency) std::printf(" %.3f", f);
    std::printf(", max violation %.3g\n", o.max_violation);
    if (certificates && run.certificates) {
      std::printf("  certificates: %s\n", run.certificates->any_violated() ? "VIOLATED" : "hold");
    }
  }
}

int cmd_solve_unparam(const GlobalOptions& g) {
  const ScenarioConfig cfg = load(g);
  const std::string dir = out_dir(g, cfg);
  const Problem problem = build_problem(cfg, prepare_data(cfg));
  const UnparamSolution sol = solve_unparam_dual(problem, cfg.unparam);
  fs::create_directories(dir);
  write_json_file((fs::path(dir) / "unparam.json").string(), to_json(sol));
  write_manifest(dir, {"unparam.json"});
  std::printf("P*_u = %.12g  D*_u = %.12g  gap %.3g\n", sol.primal_value, sol.dual_value,
              std::abs(sol.primal_value - sol.dual_value));
  return 0;
}

int cmd_train(const GlobalOptions& g, bool certificates) {
  ScenarioConfig cfg = load(g);
  cfg.certificates.enabled = cfg.certificates.enabled && certificates;
  RunOptions opts;
  opts.threads = g.threads;
  const ScenarioResult result = run_scenario(cfg, out_dir(g, cfg), opts);
  print_run_summary(result, cfg.certificates.enabled);
  return result.ok() ? 0 : kExitRuntime;
}

int cmd_verify(const GlobalOptions& g) {
  ScenarioConfig cfg = load(g);
  cfg.certificates.enabled = true;
  RunOptions opts;
  opts.threads = g.threads;
  opts.train_unconstrained = false;
  const ScenarioResult result = run_scenario(cfg, out_dir(g, cfg), opts);
  bool violated = false;
  for (const SeedRun& run : result.runs) {
    if (run.certificates) {
      std::printf("== seed %llu ==\n%s", static_cast<unsigned long long>(run.seed),
                  render_text(*run.certificates).c_str());
      violated = violated || run.certificates->any_violated();
    } else {
      std::printf("== seed %llu == failed during %s: %s\n", static_cast<unsigned long long>(run.seed),
                  run.error_stage.c_str(), run.error.c_str());
    }
  }
  if (violated) return kExitViolated;
  return result.ok() ? 0 : kExitRuntime;
}

int cmd_sweep(const GlobalOptions& g, const std::string& axis, const std::vector<std::string>& values) {
  ScenarioConfig cfg = load(g);
  SweepConfig sweep = cfg.sweep.value_or(SweepConfig{});
  if (!axis.empty()) sweep.axis = axis;
  if (!values.empty()) {
    sweep.values.clear();
    for (const std::string& v : values) sweep.values.push_back(v == "full" ? 0 : std::stoi(v));
  }
  if (sweep.axis.empty()) throw ConfigError("no sweep axis configured");
  sweep.settle_frac = cfg.settle_frac;
  RunOptions opts;
  opts.threads = g.threads;
  const SweepResult result = capacity_sweep(cfg, sweep, out_dir(g, cfg), opts);
  std::printf("%-10s %-18s %-14s %-12s %-12s\n", sweep.axis.c_str(), "median max viol", "mean accuracy", "median nu",
              "median Gamma2");
  for (const SweepSummaryRow& r : result.summary) {
    std::printf("%-10d %-18.6g %-14.4f %-12.4g %-12.4g\n", r.axis_value, r.median_max_violation, r.mean_accuracy,
                r.median_nu, r.median_gamma2);
  }
  if (result.spearman) {
    std::printf("spearman(capacity, max violation) = %.4f\n", *result.spearman);
  }
  if (!result.note.empty()) std::printf("note: %s\n", result.note.c_str());
  return 0;
}

void print_file(const fs::path& p) {
  if (!fs::exists(p)) return;
  std::printf("-- %s --\n%s\n", p.string().c_str(), read_text_file(p.string()).c_str());
}

int cmd_report(const GlobalOptions& g) {
  std::string dir = g.out;
  if (dir.empty() && !g.config.empty()) dir = out_dir(g, load(g));
  if (dir.empty() || !fs::is_directory(dir)) throw StorageError("report needs an existing --out directory");
  const fs::path root(dir);
  if (fs::exists(root / "unparam.json")) {
    const Json u = read_json_file((root / "unparam.json").string());
    std::printf("unparametrized: P*_u %s  D*_u %s\n", u.value("primal_value", Json()).dump().c_str(),
                u.value("dual_value", Json()).dump().c_str());
  }
  print_file(root / "oscillation.csv");
  print_file(root / "predictors.csv");
  std::vector<fs::path> seeds;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) seeds.push_back(e.path());
  }
  std::sort(seeds.begin(), seeds.end());
  for (const fs::path& s : seeds) {
    print_file(s / "certificates.txt");
    print_file(s / "error.json");
  }
  print_file(root / "sweep.csv");
  print_file(root / "sweep.json");
  return 0;
}

int cmd_gen_data(const GlobalOptions& g, const std::string& kind, int rows, int features, double shift) {
  if (g.out.empty()) throw ConfigError("--out is required");
  const std::uint64_t seed = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : 2024;
  std::vector<Sample> samples;
  if (kind == "compas_like") {
    CompasLikeConfig c;
    c.rows = rows;
    c.seed = seed;
    samples = generate_compas_like(c);
  } else if (kind == "regression") {
    samples = generate_regression(rows, features, seed, shift);
  } else {
    throw ConfigError("unknown data kind '" + kind + "'");
  }
  const fs::path parent = fs::path(g.out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_samples_csv(g.out, samples);
  std::printf("wrote %zu rows to %s\n", samples.size(), g.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained learning by dual ascent: training, certificates and capacity sweeps"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Scenario JSON file");
  app.add_option("--seed", g.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", g.out, "Output directory (gen-data: output CSV path)");
  app.add_option("--threads", g.threads, "Worker threads for seeds and sweep entries")->check(CLI::PositiveNumber);

  auto* solve = app.add_subcommand("solve-unparam", "Solve the unparametrized dual and write unparam.json");
  bool no_certs = false;
  auto* train = app.add_subcommand("train", "Dual ascent, unconstrained baseline, predictors and certificates");
  train->add_flag("--no-certificates", no_certs, "Skip certificate evaluation");
  auto* verify = app.add_subcommand("verify", "Evaluate certificates; exit 1 if any applicable bound is violated");
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "Capacity sweep over projection width or hidden width");
  sweep->add_option("--axis", axis, "projection | hidden");
  sweep->add_option("--values", values, "Axis values; \"full\" means no projection")->delimiter(',');
  auto* report = app.add_subcommand("report", "Print the artifacts of a completed run");
  std::string kind = "compas_like";
  int rows = 2000, features = 3;
  double shift = 0.8;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset CSV");
  gen->add_option("--kind", kind, "compas_like | regression");
  gen->add_option("--rows", rows, "Number of rows")->check(CLI::PositiveNumber);
  gen->add_option("--features", features, "Feature count (regression)")->check(CLI::PositiveNumber);
  gen->add_option("--group-shift", shift, "Target shift of the protected group (regression)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*solve) return cmd_solve_unparam(g);
    if (*train) return cmd_train(g, !no_certs);
    if (*verify) return cmd_verify(g);
    if (*sweep) return cmd_sweep(g, axis, values);
    if (*report) return cmd_report(g);
    if (*gen) return cmd_gen_data(g, kind, rows, features, shift);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StructuralError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
