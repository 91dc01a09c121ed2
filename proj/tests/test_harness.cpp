#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "duallearn/errors.hpp"
#include "duallearn/harness.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = std::string(DUALLEARN_SOURCE_DIR) + "/scenarios";

DualTrace synthetic_trace(const std::vector<double>& slack, const std::vector<double>& objective) {
  DualTrace tr;
  for (std::size_t k = 0; k < slack.size(); ++k) {
    TraceRecord r;
    r.t = static_cast<int>(k + 1);
    r.lambda = Eigen::VectorXd::Zero(1);
    r.slacks = Eigen::VectorXd::Constant(1, slack[k]);
    r.slack_hat = r.slacks;
    r.objective = objective[k];
    r.lagrangian = objective[k];
    tr.records.push_back(r);
  }
  return tr;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "duallearn_harness_tests" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("oscillation statistics on synthetic traces") {
  const std::vector<double> flat(100, 1.0);
  const OscillationStats feasible = oscillation_stats(synthetic_trace(std::vector<double>(100, -0.1), flat), 0.05);
  CHECK(feasible.settle_t == 1);
  CHECK(feasible.frequency[0] == 0.0);
  CHECK(feasible.sign_changes[0] == 0);
  CHECK(feasible.max_violation == 0.0);

  std::vector<double> alt(100);
  for (std::size_t k = 0; k < alt.size(); ++k) alt[k] = k % 2 ? 0.2 : -0.2;
  const OscillationStats osc = oscillation_stats(synthetic_trace(alt, flat), 0.05);
  CHECK(osc.frequency[0] == doctest::Approx(0.5).epsilon(0.02));
  CHECK(osc.any_frequency == osc.frequency[0]);
  CHECK(osc.sign_changes[0] >= 98);
  CHECK(osc.max_violation == doctest::Approx(0.2));
}

TEST_CASE("settling index finds the end of a transient") {
  std::vector<double> obj(200);
  for (std::size_t k = 0; k < obj.size(); ++k) obj[k] = k < 80 ? 10.0 - 0.1 * static_cast<double>(k) : 2.0;
  const int t = settling_index(synthetic_trace(std::vector<double>(200, 0.0), obj), 0.05);
  CHECK(t > 70);
  CHECK(t < 100);
}

TEST_CASE("spearman rank correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}).value() == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}).value() == doctest::Approx(-1.0));
  // Ties take average ranks: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}).value() == doctest::Approx(0.9486832980505138));
  CHECK_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) != derive_seed(2, 1));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}

TEST_CASE("scenario parsing reports configuration errors") {
  Json j = read_json_file(kScenarios + "/smoke.json");
  CHECK_NOTHROW(parse_scenario(j, kScenarios));
  Json bad = j;
  bad["seeds"] = Json::array();
  CHECK_THROWS_AS(parse_scenario(bad, kScenarios), ConfigError);
  bad = j;
  bad["ascent"]["eta"] = -1.0;
  CHECK_THROWS_AS(parse_scenario(bad, kScenarios), ConfigError);
  bad = j;
  bad["problem"] = "does_not_exist.json";
  CHECK_THROWS_AS(parse_scenario(bad, kScenarios), ConfigError);
  bad = j;
  bad["model"]["arch"] = "transformer";
  CHECK_THROWS_AS(parse_scenario(bad, kScenarios), ConfigError);
  CHECK_THROWS_AS(load_scenario(kScenarios + "/missing.json"), ConfigError);
}

TEST_CASE("every shipped scenario parses and builds") {
  for (const auto& entry : fs::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".json" || entry.path().filename().string().find("_problem") != std::string::npos) {
      continue;
    }
    CAPTURE(entry.path().string());
    const ScenarioConfig cfg = load_scenario(entry.path().string());
    const Problem p = build_problem(cfg, prepare_data(cfg));
    CHECK(p.num_constraints() >= 1);
    CHECK_NOTHROW(initial_model(cfg, p, cfg.seeds.front()));
  }
}

TEST_CASE("smoke scenario writes a manifest and is byte-for-byte deterministic") {
  const ScenarioConfig cfg = load_scenario(kScenarios + "/smoke.json");
  const fs::path a = fresh_dir("smoke_a");
  const fs::path b = fresh_dir("smoke_b");
  const ScenarioResult ra = run_scenario(cfg, a.string(), RunOptions{1, true, true});
  const ScenarioResult rb = run_scenario(cfg, b.string(), RunOptions{2, true, true});
  REQUIRE(ra.ok());
  REQUIRE(rb.ok());
  CHECK(std::abs(ra.unparam.primal_value - ra.unparam.dual_value) < 1e-6);
  const Json manifest = read_json_file((a / "manifest.json").string());
  CHECK_FALSE(ra.files.empty());
  for (const std::string& f : ra.files) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(sha256_file((a / f).string()) == sha256_file((b / f).string()));
  }
  CHECK(manifest.dump() == read_json_file((b / "manifest.json").string()).dump());
  for (const SeedRun& run : ra.runs) {
    REQUIRE(run.certificates.has_value());
    CHECK_FALSE(run.certificates->any_violated());
    CHECK(run.predictors.size() == 4);
  }
}

TEST_CASE("sweeps need three axis values and skip the trend on a single capacity") {
  ScenarioConfig cfg = load_scenario(kScenarios + "/smoke.json");
  cfg.seeds = {1};
  SweepConfig sw;
  sw.axis = "projection";
  sw.values = {2, 2};
  CHECK_THROWS_AS(capacity_sweep(cfg, sw, fresh_dir("sweep").string()), ConfigError);
  sw.values = {2, 2, 2};
  sw.certificates = false;
  const SweepResult r = capacity_sweep(cfg, sw, fresh_dir("sweep").string());
  REQUIRE(r.rows.size() == 3);
  CHECK_FALSE(r.spearman.has_value());
  CHECK_FALSE(r.note.empty());
  CHECK(sweep_csv(r).rfind("axis,axis_value,seed,max_violation,accuracy,nu,gamma2", 0) == 0);
}
