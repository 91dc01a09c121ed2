#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "duallearn/certificates.hpp"
#include "duallearn/dual_engine.hpp"
#include "duallearn/io.hpp"
#include "duallearn/models.hpp"
#include "duallearn/problem.hpp"
#include "duallearn/synthetic.hpp"
#include "duallearn/unparam.hpp"

namespace duallearn {

constexpr int kScenarioSchemaVersion = 1;

struct DataConfig {
  std::string kind = "inline";  // inline | csv | compas_like | regression
  std::string csv_path;         // resolved against the scenario directory
  std::vector<Sample> inline_samples;
  CompasLikeConfig compas;
  int rows = 0;
  int features = 0;
  std::uint64_t seed = 0;
  double group_shift = 0.8;
};

struct ModelConfig {
  Arch arch = Arch::kLinear;
  int hidden = 0;
  int projection = 0;  // rows of the frozen random projection; 0 means none
  std::uint64_t projection_seed = 0;
  // "input" projects the whole encoded input; "features" projects only the
  // non-protected features and passes the protected one-hot block through.
  std::string projection_scope = "input";
};

struct CertificateConfig {
  bool enabled = true;
  ProbeConfig probe;
  bool tilted = true;  // run the tilted ascent for lambda~ on non-convex families
};

struct SweepConfig {
  std::string axis;         // "projection" or "hidden"
  std::vector<int> values;  // 0 on the projection axis means the full input
  bool certificates = true;
  double settle_frac = 0.05;
};

struct ScenarioConfig {
  int schema_version = kScenarioSchemaVersion;
  std::string name;
  DataConfig data;
  double test_fraction = 0.0;
  std::uint64_t split_seed = 0;
  ProblemSpec problem;  // samples filled in by build_problem
  ModelConfig model;
  AscentConfig ascent;
  UnparamConfig unparam;
  CertificateConfig certificates;
  double settle_frac = 0.05;
  std::vector<std::uint64_t> seeds{0};
  std::optional<SweepConfig> sweep;
  std::string output;
  Json source;  // the parsed document, echoed into run metadata
};

/// Parses and validates a scenario document. Relative paths resolve against
/// `base_dir`; "problem" may be inline or a path to a problem file.
ScenarioConfig parse_scenario(const Json& j, const std::string& base_dir);
ScenarioConfig load_scenario(const std::string& path);
ProblemSpec parse_problem(const Json& j);

struct PreparedData {
  std::vector<Sample> train;
  std::vector<Sample> test;  // empty when test_fraction is 0
};

PreparedData prepare_data(const ScenarioConfig& cfg);
Problem build_problem(const ScenarioConfig& cfg, const PreparedData& data);
ParamModel initial_model(const ScenarioConfig& cfg, const Problem& problem, std::uint64_t seed);

struct OscillationStats {
  int settle_t = 1;
  int window = 0;
  std::vector<double> frequency;   // per constraint, fraction of post-settling iterations with positive slack
  std::vector<int> sign_changes;   // per constraint
  double any_frequency = 0.0;
  double max_violation = 0.0;      // max(0, largest post-settling slack)
};

/// First t from which the objective, averaged over a trailing window of
/// T/10 iterations, stays within settle_frac times its observed range of the
/// final averaged value.
int settling_index(const DualTrace& trace, double settle_frac);
OscillationStats oscillation_stats(const DualTrace& trace, double settle_frac);

struct PredictorRow {
  std::uint64_t seed = 0;
  PredictorKind kind = PredictorKind::kLast;
  double accuracy = 0.0;        // test set; NaN without classification labels
  double test_objective = 0.0;  // mean pointwise objective loss on the test set
  Eigen::VectorXd slacks;       // train constraints (expected slacks for the randomized mixture)
  double max_violation = 0.0;
};

/// Evaluates last / best / randomized / unconstrained predictors. The
/// randomized predictor is scored by its expectation over the checkpoints.
std::vector<PredictorRow> compare_predictors(const Problem& problem, const std::vector<Sample>& test,
                                             const PredictorBundle& bundle);

struct SeedRun {
  std::uint64_t seed = 0;
  DualTrace trace;
  DualTrace unconstrained;
  std::optional<CertificateReport> certificates;
  OscillationStats oscillation;
  std::vector<PredictorRow> predictors;
  std::string error;  // empty on success
  std::string error_stage;
};

struct ScenarioResult {
  UnparamSolution unparam;
  std::vector<SeedRun> runs;
  std::vector<std::string> files;  // relative to the output directory
  bool ok() const;
};

struct RunOptions {
  int threads = 1;
  bool write = true;
  bool train_unconstrained = true;
};

/// unparametrized solve, then per seed: dual ascent, unconstrained
/// training, certificates and predictor comparison. Writes artifacts and a
/// manifest under `out_dir` when options.write is set.
ScenarioResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir, const RunOptions& options = {});

/// Certificates for one completed run.
CertificateReport certify_run(const ScenarioConfig& cfg, const Problem& problem, const UnparamSolution& unparam,
                              const DualTrace& trace, std::uint64_t seed);

struct SweepRow {
  int axis_value = 0;  // capacity value; full projection reported as the input width
  std::uint64_t seed = 0;
  double max_violation = 0.0;
  double accuracy = 0.0;
  double nu = 0.0;
  double gamma2 = 0.0;
};

struct SweepSummaryRow {
  int axis_value = 0;
  double median_max_violation = 0.0;
  double mean_accuracy = 0.0;
  double median_nu = 0.0;
  double median_gamma2 = 0.0;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRow> rows;             // sorted by axis value then seed
  std::vector<SweepSummaryRow> summary;   // sorted by axis value
  std::optional<double> spearman;         // capacity vs median max violation; nullopt when skipped
  std::string note;
};

SweepResult capacity_sweep(const ScenarioConfig& base, const SweepConfig& sweep, const std::string& out_dir,
                           const RunOptions& options = {});

/// Independent stream for a named RNG consumer of a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Spearman rank correlation with average ranks for ties; nullopt when
/// either side is constant.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

std::string predictors_csv(const std::vector<PredictorRow>& rows, int m);
std::string sweep_csv(const SweepResult& result);

}  // namespace duallearn
