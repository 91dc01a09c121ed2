#include "duallearn/dual_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duallearn/errors.hpp"

namespace duallearn {

void validate(const AscentConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("iterations must be positive");
  if (!(cfg.eta > 0.0)) throw ConfigError("eta must be positive");
  if (cfg.t0 < 1 || cfg.t0 > cfg.iterations) throw ConfigError("t0 must lie in [1, T]");
  if (cfg.batch_size && *cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (cfg.oracle_batch && *cfg.oracle_batch < 1) throw ConfigError("oracle batch size must be positive");
  if (cfg.checkpoint_stride < 1) throw ConfigError("checkpoint stride must be positive");
}

Eigen::VectorXd dual_update(const Eigen::VectorXd& lambda, const Eigen::VectorXd& slacks, double eta) {
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  if (lambda.size() != slacks.size()) throw StructuralError("dual update size mismatch");
  return (lambda + eta * slacks).cwiseMax(0.0);
}

namespace {

// Sorted indices of B distinct draws from [0, n).
std::vector<std::size_t> draw_batch(std::size_t n, std::size_t B, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < B; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(B);
  std::sort(idx.begin(), idx.end());
  return idx;
}

OracleResult minibatch_oracle(const Problem& problem, const Eigen::VectorXd& lambda, const OracleConfig& cfg,
                              const ParamModel& init, std::size_t batch, std::mt19937_64& rng) {
  const std::vector<Sample>& all = problem.spec().samples;
  OracleConfig one = cfg;
  one.max_steps = 1;
  OracleResult res;
  res.model = init;
  for (int s = 0; s < cfg.max_steps; ++s) {
    ProblemSpec spec = problem.spec();
    spec.samples.clear();
    for (std::size_t i : draw_batch(all.size(), std::min(batch, all.size()), rng)) spec.samples.push_back(all[i]);
    res = primal_oracle(Problem(std::move(spec)), lambda, one, res.model);
  }
  return res;
}

}  // namespace

Eigen::VectorXd stochastic_slack(const Problem& problem, const FunctionTable& phi, std::optional<int> batch_size,
                                 std::mt19937_64& rng) {
  const std::size_t n = problem.dataset().num_source_samples();
  if (!batch_size || static_cast<std::size_t>(*batch_size) >= n) return problem.slacks(phi);
  const auto B = static_cast<std::size_t>(*batch_size);
  const std::vector<std::size_t> idx = draw_batch(n, B, rng);
  const Eigen::MatrixXd contrib = problem.sample_contributions(phi);
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < B; ++i) sum += contrib.row(static_cast<Eigen::Index>(idx[i])).tail(m).transpose();
  const Eigen::VectorXd tik = problem.tikhonov_terms(phi);
  return static_cast<double>(n) / static_cast<double>(B) * sum + tik.tail(m) - problem.levels();
}

Eigen::VectorXd stochastic_slack(const ParamModel& model, const Problem& problem, std::optional<int> batch_size,
                                 std::mt19937_64& rng) {
  return stochastic_slack(problem, forward_active(model, problem), batch_size, rng);
}

DualTrace run_dual_ascent(const Problem& problem, const ParamModel& init, const AscentConfig& cfg) {
  validate(cfg);
  const auto m = static_cast<Eigen::Index>(problem.num_constraints());
  DualTrace trace;
  trace.t0 = cfg.t0;
  trace.eta = cfg.eta;
  trace.tilt = cfg.tilt;
  std::mt19937_64 batch_rng(cfg.seed);
  std::mt19937_64 oracle_rng(cfg.oracle.seed ^ 0x6f7261636c65ULL);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  ParamModel current = init;
  const Eigen::VectorXd tilt = Eigen::VectorXd::Constant(m, cfg.tilt);
  for (int t = 1; t <= cfg.iterations; ++t) {
    OracleResult res;
    try {
      ParamModel start = current;
      if (cfg.oracle.init_policy == InitPolicy::kFreshSeeded) {
        start = make_model(init.arch, init.hidden, init.input_dim, init.output_dim, init.softmax,
                           cfg.oracle.seed + static_cast<std::uint64_t>(t), init.projection);
      }
      res = cfg.oracle_batch ? minibatch_oracle(problem, lambda, cfg.oracle, start,
                                                static_cast<std::size_t>(*cfg.oracle_batch), oracle_rng)
                             : primal_oracle(problem, lambda, cfg.oracle, start);
    } catch (const std::exception& e) {
      trace.aborted = true;
      trace.diagnostic = "oracle failed at iteration " + std::to_string(t) + ": " + e.what();
      break;
    }
    current = std::move(res.model);
    const FunctionTable phi = forward_active(current, problem);
    TraceRecord rec;
    rec.t = t;
    rec.lambda = lambda;
    const Eigen::VectorXd raw = problem.raw_losses(phi);
    rec.objective = raw[0];
    rec.slacks = raw.tail(m) - problem.levels();
    rec.lagrangian = rec.objective + lambda.dot(rec.slacks);
    rec.gap_surrogate = res.gap_surrogate;
    rec.slack_hat = cfg.batch_size ? stochastic_slack(problem, phi, cfg.batch_size, batch_rng) : rec.slacks;
    if (!rec.slacks.allFinite() || !rec.slack_hat.allFinite() || !std::isfinite(rec.lagrangian)) {
      trace.aborted = true;
      trace.diagnostic = "non-finite losses at iteration " + std::to_string(t);
      break;
    }
    if (t >= cfg.t0 || t % cfg.checkpoint_stride == 0 || t == 1) trace.checkpoints.emplace(t, current);
    if (!cfg.freeze_dual) lambda = dual_update(lambda, rec.slack_hat + tilt, cfg.eta);
    trace.records.push_back(std::move(rec));
  }
  trace.final_lambda = lambda;
  if (!trace.records.empty()) {
    const int t0 = std::min(cfg.t0, trace.length());
    trace.best_index = best_iterate(trace, t0).index;
    trace.s2_estimate = estimate_s2(trace);
  }
  return trace;
}

BestIterate best_iterate(const DualTrace& trace, int t0) {
  if (trace.records.empty()) throw StorageError("trace is empty");
  if (t0 < 1 || t0 > trace.length()) throw ConfigError("t0 must lie in [1, T]");
  BestIterate best{t0, trace.at(t0).lagrangian};
  for (int t = t0 + 1; t <= trace.length(); ++t) {
    if (trace.at(t).lagrangian > best.value) best = {t, trace.at(t).lagrangian};
  }
  return best;
}

double estimate_s2(const DualTrace& trace) {
  double mx = 0.0;
  for (const TraceRecord& r : trace.records) mx = std::max(mx, r.slack_hat.squaredNorm());
  return 1.1 * mx;
}

const char* to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kLast: return "last";
    case PredictorKind::kBest: return "best";
    case PredictorKind::kRandomized: return "randomized";
    case PredictorKind::kUnconstrained: return "unconstrained";
  }
  return "unknown";
}

PredictorKind parse_predictor(const std::string& name) {
  if (name == "last") return PredictorKind::kLast;
  if (name == "best") return PredictorKind::kBest;
  if (name == "randomized") return PredictorKind::kRandomized;
  if (name == "unconstrained") return PredictorKind::kUnconstrained;
  throw ConfigError("unknown predictor '" + name + "'");
}

PredictorBundle make_bundle(const DualTrace& trace, const DualTrace& unconstrained, std::uint64_t seed) {
  if (trace.records.empty() || unconstrained.records.empty()) throw StorageError("cannot build predictors from an empty trace");
  PredictorBundle b;
  const int T = trace.length();
  auto checkpoint = [](const DualTrace& tr, int t) -> const ParamModel& {
    auto it = tr.checkpoints.find(t);
    if (it == tr.checkpoints.end()) throw StorageError("missing checkpoint for iteration " + std::to_string(t));
    return it->second;
  };
  b.last = checkpoint(trace, T);
  b.best_t = trace.best_index;
  b.best = checkpoint(trace, trace.best_index);
  for (int t = std::min(trace.t0, T); t <= T; ++t) {
    b.randomized_support.push_back(t);
    b.checkpoints.emplace(t, checkpoint(trace, t));
  }
  b.seed = seed;
  b.unconstrained = checkpoint(unconstrained, unconstrained.length());
  return b;
}

Predictor::Predictor(const PredictorBundle& bundle, PredictorKind kind) : bundle_(bundle), kind_(kind), rng_(bundle.seed) {
  if (kind_ == PredictorKind::kRandomized && bundle_.randomized_support.empty()) {
    throw StorageError("randomized predictor has no checkpoints");
  }
}

Eigen::VectorXd Predictor::predict(const Eigen::VectorXd& x) {
  const ParamModel* model = nullptr;
  switch (kind_) {
    case PredictorKind::kLast: model = &bundle_.last; break;
    case PredictorKind::kBest: model = &bundle_.best; break;
    case PredictorKind::kUnconstrained: model = &bundle_.unconstrained; break;
    case PredictorKind::kRandomized: {
      std::uniform_int_distribution<std::size_t> pick(0, bundle_.randomized_support.size() - 1);
      last_draw_ = bundle_.randomized_support[pick(rng_)];
      auto it = bundle_.checkpoints.find(last_draw_);
      if (it == bundle_.checkpoints.end()) throw StorageError("missing checkpoint " + std::to_string(last_draw_));
      model = &it->second;
      break;
    }
  }
  return model->predict(x.transpose()).row(0).transpose();
}

}  // namespace duallearn
