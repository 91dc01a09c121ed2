#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duallearn/models.hpp"
#include "duallearn/problem.hpp"

namespace duallearn {

struct AscentConfig {
  int iterations = 100;
  double eta = 1.0;
  std::optional<int> batch_size;  // nullopt: exact full-data slacks
  // When set, every oracle step descends the Lagrangian of a fresh batch of
  // this many source samples instead of the full data.
  std::optional<int> oracle_batch;
  OracleConfig oracle;
  std::uint64_t seed = 0;
  int t0 = 1;
  int checkpoint_stride = 10;
  double tilt = 0.0;         // added to every slack estimate before the update
  bool freeze_dual = false;  // keep lambda at zero (unconstrained training)
};

void validate(const AscentConfig& cfg);

struct TraceRecord {
  int t = 0;
  Eigen::VectorXd lambda;
  Eigen::VectorXd slacks;     // exact, full data
  Eigen::VectorXd slack_hat;  // the estimates that drove the update
  double objective = 0.0;
  double lagrangian = 0.0;
  double gap_surrogate = 0.0;
};

struct DualTrace {
  std::vector<TraceRecord> records;  // records[t-1] holds iteration t
  std::map<int, ParamModel> checkpoints;
  Eigen::VectorXd final_lambda;      // lambda(T+1)
  int t0 = 1;
  double eta = 0.0;
  double tilt = 0.0;
  int best_index = 0;
  double s2_estimate = 0.0;
  bool aborted = false;
  std::string diagnostic;

  const TraceRecord& at(int t) const { return records.at(static_cast<std::size_t>(t - 1)); }
  int length() const { return static_cast<int>(records.size()); }
};

/// lambda_i <- max(0, lambda_i + eta * slack_i).
Eigen::VectorXd dual_update(const Eigen::VectorXd& lambda, const Eigen::VectorXd& slacks, double eta);

/// Slack estimates from a uniform batch of source samples drawn without
/// replacement; each sample keeps its counterfactual images. Unbiased for
/// the exact slacks. nullopt or a batch covering all samples is exact.
Eigen::VectorXd stochastic_slack(const Problem& problem, const FunctionTable& phi, std::optional<int> batch_size,
                                 std::mt19937_64& rng);
Eigen::VectorXd stochastic_slack(const ParamModel& model, const Problem& problem, std::optional<int> batch_size,
                                 std::mt19937_64& rng);

DualTrace run_dual_ascent(const Problem& problem, const ParamModel& init, const AscentConfig& cfg);

struct BestIterate {
  int index = 0;
  double value = 0.0;
};

/// argmax of the recorded Lagrangian over [t0, T]; ties go to the earliest.
BestIterate best_iterate(const DualTrace& trace, int t0);

/// 1.1 * max_t sum_i slack_hat_i(t)^2.
double estimate_s2(const DualTrace& trace);

enum class PredictorKind { kLast, kBest, kRandomized, kUnconstrained };
const char* to_string(PredictorKind kind);
PredictorKind parse_predictor(const std::string& name);

struct PredictorBundle {
  ParamModel last;
  ParamModel best;
  int best_t = 0;
  std::vector<int> randomized_support;  // checkpoint times in [t0, T]
  std::map<int, ParamModel> checkpoints;
  std::uint64_t seed = 0;
  ParamModel unconstrained;
};

PredictorBundle make_bundle(const DualTrace& trace, const DualTrace& unconstrained, std::uint64_t seed);

/// Stateful predictor: randomized mode draws a fresh checkpoint per call.
class Predictor {
 public:
  Predictor(const PredictorBundle& bundle, PredictorKind kind);

  Eigen::VectorXd predict(const Eigen::VectorXd& x);
  /// Checkpoint time used by the most recent randomized call.
  int last_draw() const { return last_draw_; }

 private:
  const PredictorBundle& bundle_;
  PredictorKind kind_;
  std::mt19937_64 rng_;
  int last_draw_ = 0;
};

}  // namespace duallearn
