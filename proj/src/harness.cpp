#include "duallearn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include "duallearn/convex_reference.hpp"
#include "duallearn/errors.hpp"

namespace duallearn {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamBatch = 2;
constexpr std::uint64_t kStreamPredictor = 3;
constexpr std::uint64_t kStreamProbe = 4;

template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

int attribute_index(const Json& j, const AttributeSchema& schema) {
  if (j.is_number_integer()) {
    const int a = j.get<int>();
    if (a < 0 || static_cast<std::size_t>(a) >= schema.size()) throw ConfigError("attribute index out of range");
    return a;
  }
  const std::string name = j.get<std::string>();
  for (std::size_t i = 0; i < schema.names.size(); ++i) {
    if (schema.names[i] == name) return static_cast<int>(i);
  }
  throw ConfigError("unknown attribute '" + name + "'");
}

DeclaredConstants parse_declared(const Json& j) {
  DeclaredConstants d;
  if (!j.is_object()) return d;
  if (j.contains("M")) d.M = j.at("M").get<double>();
  if (j.contains("beta")) d.beta = j.at("beta").get<double>();
  if (j.contains("mu")) d.mu = j.at("mu").get<double>();
  return d;
}

PointwiseLoss parse_loss(const Json& j) {
  PointwiseLoss loss;
  loss.kind = parse_loss_kind(j.at("kind").get<std::string>());
  loss.tau = value_or(j, "tau", 0.0);
  if (j.contains("declared")) loss.declared = parse_declared(j.at("declared"));
  return loss;
}

OracleConfig parse_oracle(const Json& j, OracleConfig o) {
  if (!j.is_object()) return o;
  o.max_steps = value_or(j, "max_steps", o.max_steps);
  o.step_size = value_or(j, "step_size", o.step_size);
  o.rho_target = value_or(j, "rho_target", o.rho_target);
  if (j.contains("optimizer")) o.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  o.momentum = value_or(j, "momentum", o.momentum);
  o.weight_decay = value_or(j, "weight_decay", o.weight_decay);
  o.backtracking = value_or(j, "backtracking", o.backtracking);
  o.grad_tol = value_or(j, "grad_tol", o.grad_tol);
  if (j.contains("init_policy")) {
    const std::string p = j.at("init_policy").get<std::string>();
    if (p == "warm_start_previous") {
      o.init_policy = InitPolicy::kWarmStartPrevious;
    } else if (p == "fresh_seeded") {
      o.init_policy = InitPolicy::kFreshSeeded;
    } else {
      throw ConfigError("unknown init_policy '" + p + "'");
    }
  }
  if (o.max_steps < 0 || !(o.step_size > 0.0) || o.rho_target < 0.0) throw ConfigError("invalid oracle settings");
  return o;
}

std::vector<Sample> parse_inline_rows(const Json& rows) {
  std::vector<Sample> out;
  for (const Json& r : rows) {
    Sample s;
    const auto x = r.at("x").get<std::vector<double>>();
    s.features = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    s.protected_attrs = value_or(r, "z", std::vector<int>{});
    s.label = r.at("y").get<double>();
    s.weight = value_or(r, "w", 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    s += x;
    ++n;
  }
  return n ? s / n : kNaN;
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Mean pointwise objective loss and accuracy of `outputs` on `samples`.
std::pair<double, double> score_outputs(const Problem& problem, const std::vector<Sample>& samples,
                                        const Eigen::MatrixXd& outputs) {
  if (samples.empty()) return {kNaN, kNaN};
  const bool simplex = problem.geometry() == OutputGeometry::kSimplex;
  const int K = problem.output_dim();
  const LossKind kind = problem.spec().objective.kind;
  double loss = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Eigen::VectorXd f = outputs.row(static_cast<Eigen::Index>(i)).transpose();
    const double y = samples[i].label;
    if (kind == LossKind::kCrossEntropy) {
      loss -= std::log(f[static_cast<Eigen::Index>(y)]);
    } else if (K == 1) {
      loss += (f[0] - y) * (f[0] - y);
    } else {
      Eigen::VectorXd target = Eigen::VectorXd::Zero(K);
      target[static_cast<Eigen::Index>(y)] = 1.0;
      loss += (f - target).squaredNorm();
    }
    if (simplex) {
      Eigen::Index arg = 0;
      f.maxCoeff(&arg);
      correct += static_cast<double>(arg) == y ? 1.0 : 0.0;
    }
  }
  const double n = static_cast<double>(samples.size());
  return {loss / n, simplex ? correct / n : kNaN};
}

Eigen::MatrixXd encode_samples(const std::vector<Sample>& samples, const AttributeSchema& schema) {
  if (samples.empty()) return {};
  const Eigen::VectorXd first = Dataset::encode(samples[0].features, samples[0].protected_attrs, schema);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), first.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) = Dataset::encode(samples[i].features, samples[i].protected_attrs, schema).transpose();
  }
  return X;
}

Json error_record(const std::string& stage, const std::string& message) {
  return Json{{"stage", stage}, {"message", message}};
}

std::string oscillation_csv(const std::vector<SeedRun>& runs, int m) {
  std::string out = "seed,settle_t,window";
  for (int i = 1; i <= m; ++i) out += ",frequency_" + std::to_string(i);
  out += ",any_frequency";
  for (int i = 1; i <= m; ++i) out += ",sign_changes_" + std::to_string(i);
  out += ",max_violation\n";
  for (const SeedRun& r : runs) {
    if (!r.error.empty()) continue;
    const OscillationStats& o = r.oscillation;
    out += std::to_string(r.seed) + "," + std::to_string(o.settle_t) + "," + std::to_string(o.window);
    for (double f : o.frequency) out += "," + format_double(f);
    out += "," + format_double(o.any_frequency);
    for (int c : o.sign_changes) out += "," + std::to_string(c);
    out += "," + format_double(o.max_violation) + "\n";
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ProblemSpec parse_problem(const Json& j) {
  ProblemSpec spec;
  spec.output_dim = value_or(j, "output_dim", 1);
  spec.geometry = parse_geometry(value_or<std::string>(j, "geometry", "unconstrained_reals"));
  if (j.contains("attributes")) {
    spec.schema.names = j.at("attributes").at("names").get<std::vector<std::string>>();
    spec.schema.cardinalities = j.at("attributes").at("cardinalities").get<std::vector<int>>();
    if (spec.schema.names.size() != spec.schema.cardinalities.size()) {
      throw ConfigError("attribute names and cardinalities differ in length");
    }
  }
  spec.objective = parse_loss(j.at("objective"));
  for (const Json& c : j.at("constraints")) {
    ConstraintSpec cs;
    cs.loss = parse_loss(c);
    cs.level = c.at("level").get<double>();
    cs.name = value_or<std::string>(c, "name", "");
    cs.scale = value_or(c, "scale", 1.0);
    cs.component = value_or(c, "component", 0);
    if (c.contains("transform")) {
      const Json& t = c.at("transform");
      Transform tr;
      tr.attribute = attribute_index(t.at("attribute"), spec.schema);
      tr.from = t.at("from").get<int>();
      tr.to = t.at("to").get<int>();
      const std::string kind = value_or<std::string>(t, "kind", "swap");
      if (kind == "swap") {
        tr.kind = TransformKind::kSwap;
      } else if (kind == "map") {
        tr.kind = TransformKind::kMap;
      } else {
        throw ConfigError("unknown transform kind '" + kind + "'");
      }
      cs.transform = tr;
    }
    if (c.contains("group")) {
      const Json& g = c.at("group");
      cs.group = GroupFilter{attribute_index(g.at("attribute"), spec.schema), g.at("value").get<int>()};
    }
    spec.constraints.push_back(std::move(cs));
  }
  for (std::size_t i = 0; i < spec.constraints.size(); ++i) {
    if (spec.constraints[i].name.empty()) spec.constraints[i].name = "constraint_" + std::to_string(i + 1);
  }
  return spec;
}

ScenarioConfig parse_scenario(const Json& j, const std::string& base_dir) {
  ScenarioConfig cfg;
  cfg.source = j;
  try {
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != kScenarioSchemaVersion) {
      throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));
    }
    cfg.name = value_or<std::string>(j, "name", "scenario");
    const fs::path base(base_dir);

    const Json& d = j.at("data");
    cfg.data.kind = d.at("kind").get<std::string>();
    if (cfg.data.kind == "inline") {
      cfg.data.inline_samples = parse_inline_rows(d.at("rows"));
    } else if (cfg.data.kind == "csv") {
      cfg.data.csv_path = (base / d.at("path").get<std::string>()).lexically_normal().string();
      if (!fs::exists(cfg.data.csv_path)) throw ConfigError("data file '" + cfg.data.csv_path + "' does not exist");
    } else if (cfg.data.kind == "compas_like") {
      cfg.data.compas.rows = value_or(d, "rows", cfg.data.compas.rows);
      cfg.data.compas.seed = value_or(d, "seed", cfg.data.compas.seed);
    } else if (cfg.data.kind == "regression") {
      cfg.data.rows = d.at("rows").get<int>();
      cfg.data.features = d.at("features").get<int>();
      cfg.data.seed = value_or<std::uint64_t>(d, "seed", 0);
      cfg.data.group_shift = value_or(d, "group_shift", cfg.data.group_shift);
    } else {
      throw ConfigError("unknown data kind '" + cfg.data.kind + "'");
    }

    if (j.contains("split")) {
      cfg.test_fraction = value_or(j.at("split"), "test_fraction", 0.0);
      cfg.split_seed = value_or<std::uint64_t>(j.at("split"), "seed", 0);
      if (cfg.test_fraction < 0.0 || cfg.test_fraction >= 1.0) throw ConfigError("test_fraction must lie in [0, 1)");
    }

    const Json& p = j.at("problem");
    if (p.is_string()) {
      const std::string path = (base / p.get<std::string>()).lexically_normal().string();
      if (!fs::exists(path)) throw ConfigError("problem file '" + path + "' does not exist");
      cfg.problem = parse_problem(read_json_file(path));
    } else {
      cfg.problem = parse_problem(p);
    }

    if (j.contains("model")) {
      const Json& m = j.at("model");
      cfg.model.arch = parse_arch(value_or<std::string>(m, "arch", "linear"));
      cfg.model.hidden = value_or(m, "hidden", 0);
      if (m.contains("projection") && m.at("projection").is_string()) {
        if (m.at("projection").get<std::string>() != "full") throw ConfigError("projection must be a width or \"full\"");
      } else {
        cfg.model.projection = value_or(m, "projection", 0);
      }
      cfg.model.projection_seed = value_or<std::uint64_t>(m, "projection_seed", 0);
      cfg.model.projection_scope = value_or<std::string>(m, "projection_scope", "input");
      if (cfg.model.projection_scope != "input" && cfg.model.projection_scope != "features") {
        throw ConfigError("projection_scope must be input or features");
      }
      if (cfg.model.arch == Arch::kMlp2 && cfg.model.hidden < 1) throw ConfigError("mlp2 needs a positive hidden width");
      if (cfg.model.projection < 0) throw ConfigError("projection width must be nonnegative");
    }

    if (j.contains("ascent")) {
      const Json& a = j.at("ascent");
      cfg.ascent.iterations = value_or(a, "iterations", cfg.ascent.iterations);
      cfg.ascent.eta = value_or(a, "eta", cfg.ascent.eta);
      if (a.contains("batch_size") && a.at("batch_size").is_number_integer()) {
        cfg.ascent.batch_size = a.at("batch_size").get<int>();
      } else if (a.contains("batch_size") && a.at("batch_size") != "full") {
        throw ConfigError("batch_size must be an integer or \"full\"");
      }
      cfg.ascent.t0 = value_or(a, "t0", 1);
      cfg.ascent.checkpoint_stride = value_or(a, "checkpoint_stride", cfg.ascent.checkpoint_stride);
    }
    cfg.ascent.oracle = parse_oracle(j.contains("oracle") ? j.at("oracle") : Json(), cfg.ascent.oracle);
    if (j.contains("oracle") && j.at("oracle").contains("batch_size")) {
      cfg.ascent.oracle_batch = j.at("oracle").at("batch_size").get<int>();
    }
    validate(cfg.ascent);

    if (j.contains("unparam")) {
      const Json& u = j.at("unparam");
      cfg.unparam.ascent.max_iters = value_or(u, "max_iters", cfg.unparam.ascent.max_iters);
      cfg.unparam.ascent.tol = value_or(u, "tol", cfg.unparam.ascent.tol);
      cfg.unparam.ascent.cap = value_or(u, "cap", cfg.unparam.ascent.cap);
      cfg.unparam.slater_check = value_or(u, "slater_check", cfg.unparam.slater_check);
    }

    if (j.contains("certificates")) {
      const Json& c = j.at("certificates");
      cfg.certificates.enabled = value_or(c, "enabled", true);
      cfg.certificates.tilted = value_or(c, "tilted", true);
      ProbeConfig& pc = cfg.certificates.probe;
      pc.probe_count = value_or(c, "probe_count", pc.probe_count);
      pc.seed = value_or<std::uint64_t>(c, "probe_seed", pc.seed);
      pc.lambda_grid = value_or(c, "lambda_grid", pc.lambda_grid);
      pc.vacuity_factor = value_or(c, "vacuity_factor", pc.vacuity_factor);
      pc.rho_stride = value_or(c, "rho_stride", pc.rho_stride);
      pc.fit = parse_oracle(c.contains("fit") ? c.at("fit") : Json(), OracleConfig{200, 0.5});
      if (pc.probe_count < 200) throw ConfigError("probe_count must be at least 200");
    }
    cfg.settle_frac = value_or(j, "settle_frac", cfg.settle_frac);
    if (!(cfg.settle_frac > 0.0 && cfg.settle_frac < 1.0)) throw ConfigError("settle_frac must lie in (0, 1)");

    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("seeds must be nonempty");

    if (j.contains("sweep")) {
      const Json& s = j.at("sweep");
      SweepConfig sw;
      sw.axis = s.at("axis").get<std::string>();
      if (sw.axis != "projection" && sw.axis != "hidden") throw ConfigError("sweep axis must be projection or hidden");
      for (const Json& v : s.at("values")) {
        if (v.is_string()) {
          if (v.get<std::string>() != "full" || sw.axis != "projection") throw ConfigError("invalid sweep value");
          sw.values.push_back(0);
        } else {
          const int x = v.get<int>();
          if (x < 1) throw ConfigError("sweep values must be positive");
          sw.values.push_back(x);
        }
      }
      sw.certificates = value_or(s, "certificates", true);
      sw.settle_frac = cfg.settle_frac;
      cfg.sweep = sw;
    }
    cfg.output = value_or<std::string>(j, "output", "");
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("scenario file '" + path + "' does not exist");
  return parse_scenario(read_json_file(path), fs::path(path).parent_path().string());
}

PreparedData prepare_data(const ScenarioConfig& cfg) {
  std::vector<Sample> all;
  if (cfg.data.kind == "inline") {
    all = cfg.data.inline_samples;
  } else if (cfg.data.kind == "csv") {
    all = load_samples_csv(cfg.data.csv_path);
  } else if (cfg.data.kind == "compas_like") {
    all = generate_compas_like(cfg.data.compas);
  } else {
    all = generate_regression(cfg.data.rows, cfg.data.features, cfg.data.seed, cfg.data.group_shift);
  }
  PreparedData out;
  if (cfg.test_fraction > 0.0) {
    std::tie(out.train, out.test) = split_samples(all, cfg.test_fraction, cfg.split_seed);
  } else {
    out.train = std::move(all);
  }
  return out;
}

Problem build_problem(const ScenarioConfig& cfg, const PreparedData& data) {
  ProblemSpec spec = cfg.problem;
  spec.samples = data.train;
  return Problem(std::move(spec));
}

ParamModel initial_model(const ScenarioConfig& cfg, const Problem& problem, std::uint64_t seed) {
  Eigen::MatrixXd projection;
  const int d = static_cast<int>(problem.dataset().input_dim());
  if (cfg.model.projection > 0 && cfg.model.projection_scope == "features") {
    const int nf = static_cast<int>(problem.dataset().feature_dim());
    const int nz = d - nf;
    projection = Eigen::MatrixXd::Zero(cfg.model.projection + nz, d);
    projection.topLeftCorner(cfg.model.projection, nf) =
        random_projection(cfg.model.projection, nf, cfg.model.projection_seed);
    projection.bottomRightCorner(nz, nz).setIdentity();
  } else if (cfg.model.projection > 0) {
    projection = random_projection(cfg.model.projection, d, cfg.model.projection_seed);
  }
  return make_model(cfg.model.arch, cfg.model.hidden, problem, derive_seed(seed, kStreamInit), projection);
}

int settling_index(const DualTrace& trace, double settle_frac) {
  const int T = trace.length();
  if (T == 0) return 1;
  // Trailing moving average over T/10 iterations.
  const int w = std::max(1, static_cast<int>(std::lround(T / 10.0)));
  std::vector<double> smooth(static_cast<std::size_t>(T));
  double run = 0.0;
  for (int t = 1; t <= T; ++t) {
    run += trace.at(t).objective;
    if (t > w) run -= trace.at(t - w).objective;
    smooth[static_cast<std::size_t>(t - 1)] = run / std::min(t, w);
  }
  const auto [lo, hi] = std::minmax_element(smooth.begin(), smooth.end());
  const double band = settle_frac * (*hi - *lo);
  const double final_value = smooth.back();
  int t = T;
  while (t > 1 && std::abs(smooth[static_cast<std::size_t>(t - 2)] - final_value) <= band) --t;
  return t;
}

OscillationStats oscillation_stats(const DualTrace& trace, double settle_frac) {
  OscillationStats s;
  const int T = trace.length();
  if (T == 0) return s;
  const auto m = static_cast<std::size_t>(trace.at(1).slacks.size());
  s.settle_t = settling_index(trace, settle_frac);
  s.window = T - s.settle_t + 1;
  s.frequency.assign(m, 0.0);
  s.sign_changes.assign(m, 0);
  int any = 0;
  for (int t = s.settle_t; t <= T; ++t) {
    const Eigen::VectorXd& sl = trace.at(t).slacks;
    bool violated = false;
    for (std::size_t i = 0; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (sl[ii] > 0.0) {
        s.frequency[i] += 1.0;
        violated = true;
      }
      if (t > s.settle_t && (sl[ii] > 0.0) != (trace.at(t - 1).slacks[ii] > 0.0)) ++s.sign_changes[i];
    }
    if (violated) ++any;
    s.max_violation = std::max(s.max_violation, sl.size() ? sl.maxCoeff() : 0.0);
  }
  for (double& f : s.frequency) f /= s.window;
  s.any_frequency = static_cast<double>(any) / s.window;
  return s;
}

std::vector<PredictorRow> compare_predictors(const Problem& problem, const std::vector<Sample>& test,
                                             const PredictorBundle& bundle) {
  const Eigen::MatrixXd X = encode_samples(test, problem.dataset().schema());
  auto evaluate = [&](const ParamModel& model, PredictorKind kind) {
    PredictorRow row;
    row.seed = bundle.seed;
    row.kind = kind;
    row.slacks = problem.slacks(forward_active(model, problem));
    std::tie(row.test_objective, row.accuracy) =
        test.empty() ? std::pair<double, double>{kNaN, kNaN} : score_outputs(problem, test, model.predict(X));
    return row;
  };
  std::vector<PredictorRow> rows;
  rows.push_back(evaluate(bundle.last, PredictorKind::kLast));
  rows.push_back(evaluate(bundle.best, PredictorKind::kBest));
  PredictorRow rnd;
  rnd.seed = bundle.seed;
  rnd.kind = PredictorKind::kRandomized;
  rnd.slacks = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.num_constraints()));
  rnd.accuracy = 0.0;
  rnd.test_objective = 0.0;
  for (int t : bundle.randomized_support) {
    const PredictorRow r = evaluate(bundle.checkpoints.at(t), PredictorKind::kRandomized);
    rnd.slacks += r.slacks;
    rnd.accuracy += r.accuracy;
    rnd.test_objective += r.test_objective;
  }
  const double n = static_cast<double>(bundle.randomized_support.size());
  rnd.slacks /= n;
  rnd.accuracy /= n;
  rnd.test_objective /= n;
  rows.push_back(rnd);
  rows.push_back(evaluate(bundle.unconstrained, PredictorKind::kUnconstrained));
  for (PredictorRow& r : rows) r.max_violation = std::max(0.0, r.slacks.size() ? r.slacks.maxCoeff() : 0.0);
  return rows;
}

CertificateReport certify_run(const ScenarioConfig& cfg, const Problem& problem, const UnparamSolution& unparam,
                              const DualTrace& trace, std::uint64_t seed) {
  CertificateContext ctx;
  ctx.problem = &problem;
  ctx.unparam = &unparam;
  ctx.trace = &trace;
  ctx.family = initial_model(cfg, problem, seed);
  if (supports_exact_reference(problem, ctx.family)) {
    ctx.exact = solve_exact_family(problem, ctx.family, cfg.unparam.ascent);
  }
  ProbeConfig probe = cfg.certificates.probe;
  probe.seed = derive_seed(seed ^ probe.seed, kStreamProbe);
  ConstantEstimates constants = estimate_constants(ctx, probe);
  const double tilt = constants.M * constants.nu;
  if (ctx.exact) {
    constants.lambda_tilde_norm = tilted_lambda_norm_exact(problem, ctx.family, tilt);
    constants.provenance["lambda_tilde_norm"] = "exact";
  } else if (cfg.certificates.tilted) {
    AscentConfig tilted = cfg.ascent;
    tilted.seed = derive_seed(seed, kStreamBatch);
    tilted.oracle.seed = derive_seed(seed, kStreamInit);
    tilted.tilt = tilt;
    const DualTrace tt = run_dual_ascent(problem, ctx.family, tilted);
    if (tt.aborted) throw NumericalError("tilted ascent aborted: " + tt.diagnostic);
    constants.lambda_tilde_norm = tilted_lambda_norm(tt);
    constants.provenance["lambda_tilde_norm"] = "tilted ascent best iterate";
  } else {
    constants.lambda_tilde_norm = constants.lambda_p_norm;
    constants.provenance["lambda_tilde_norm"] = "lambda_p surrogate";
  }
  return verify_bounds(ctx, constants, probe);
}

bool ScenarioResult::ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.error.empty(); });
}

namespace {

SeedRun run_seed(const ScenarioConfig& cfg, const Problem& problem, const PreparedData& data,
                 const UnparamSolution& unparam, std::uint64_t seed, const RunOptions& options) {
  SeedRun run;
  run.seed = seed;
  const ParamModel init = initial_model(cfg, problem, seed);
  AscentConfig ac = cfg.ascent;
  ac.seed = derive_seed(seed, kStreamBatch);
  ac.oracle.seed = derive_seed(seed, kStreamInit);
  run.error_stage = "dual_ascent";
  run.trace = run_dual_ascent(problem, init, ac);
  if (run.trace.aborted) {
    run.error = run.trace.diagnostic;
    return run;
  }
  run.oscillation = oscillation_stats(run.trace, cfg.settle_frac);
  try {
    if (options.train_unconstrained) {
      run.error_stage = "unconstrained";
      AscentConfig uc = ac;
      uc.freeze_dual = true;
      run.unconstrained = run_dual_ascent(problem, init, uc);
      if (run.unconstrained.aborted) throw NumericalError(run.unconstrained.diagnostic);
      run.error_stage = "predictors";
      const PredictorBundle bundle = make_bundle(run.trace, run.unconstrained, derive_seed(seed, kStreamPredictor));
      run.predictors = compare_predictors(problem, data.test, bundle);
      for (PredictorRow& r : run.predictors) r.seed = seed;
    }
    if (cfg.certificates.enabled) {
      run.error_stage = "certificates";
      run.certificates = certify_run(cfg, problem, unparam, run.trace, seed);
    }
    run.error_stage.clear();
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

void write_seed_artifacts(const ScenarioConfig& cfg, const SeedRun& run, const std::string& out_dir,
                          std::vector<std::string>& files) {
  const std::string rel = seed_dir(run.seed);
  const fs::path dir = fs::path(out_dir) / rel;
  fs::create_directories(dir);
  auto add = [&](const std::string& name) { files.push_back(rel + "/" + name); };
  if (!run.trace.records.empty()) {
    write_trace_csv((dir / "trace.csv").string(), run.trace);
    add("trace.csv");
    write_checkpoints((dir / "checkpoints.bin").string(), run.trace.checkpoints);
    add("checkpoints.bin");
  }
  if (!run.unconstrained.records.empty()) {
    write_trace_csv((dir / "trace_unconstrained.csv").string(), run.unconstrained);
    add("trace_unconstrained.csv");
    write_json_file((dir / "model_unconstrained.json").string(),
                    model_to_json(run.unconstrained.checkpoints.at(run.unconstrained.length())));
    add("model_unconstrained.json");
  }
  if (run.certificates) {
    write_json_file((dir / "certificates.json").string(), to_json(*run.certificates));
    add("certificates.json");
    write_text_file((dir / "certificates.txt").string(), render_text(*run.certificates));
    add("certificates.txt");
  }
  Json meta{{"schema_version", kScenarioSchemaVersion},
            {"scenario", cfg.name},
            {"seed", run.seed},
            {"streams",
             {{"oracle_init", derive_seed(run.seed, kStreamInit)},
              {"batch", derive_seed(run.seed, kStreamBatch)},
              {"randomized_predictor", derive_seed(run.seed, kStreamPredictor)}}},
            {"trace", to_json(run.trace)},
            {"config", cfg.source}};
  write_json_file((dir / "run.json").string(), meta);
  add("run.json");
  if (!run.error.empty()) {
    write_json_file((dir / "error.json").string(), error_record(run.error_stage, run.error));
    add("error.json");
  }
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg, const std::string& out_dir, const RunOptions& options) {
  ScenarioResult result;
  if (options.write) fs::create_directories(out_dir);
  const PreparedData data = prepare_data(cfg);
  const Problem problem = build_problem(cfg, data);
  try {
    result.unparam = solve_unparam_dual(problem, cfg.unparam);
  } catch (const std::exception& e) {
    if (options.write) {
      write_json_file((fs::path(out_dir) / "error.json").string(), error_record("unparam", e.what()));
      write_manifest(out_dir, {"error.json"});
    }
    throw;
  }
  result.runs.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), options.threads, [&](std::size_t i) {
    result.runs[i] = run_seed(cfg, problem, data, result.unparam, cfg.seeds[i], options);
  });
  if (!options.write) return result;

  write_json_file((fs::path(out_dir) / "unparam.json").string(), to_json(result.unparam));
  result.files.push_back("unparam.json");
  for (const SeedRun& run : result.runs) write_seed_artifacts(cfg, run, out_dir, result.files);
  const int m = static_cast<int>(problem.num_constraints());
  if (options.train_unconstrained) {
    std::vector<PredictorRow> rows;
    for (const SeedRun& r : result.runs) rows.insert(rows.end(), r.predictors.begin(), r.predictors.end());
    write_text_file((fs::path(out_dir) / "predictors.csv").string(), predictors_csv(rows, m));
    result.files.push_back("predictors.csv");
  }
  write_text_file((fs::path(out_dir) / "oscillation.csv").string(), oscillation_csv(result.runs, m));
  result.files.push_back("oscillation.csv");
  write_manifest(out_dir, result.files);
  result.files.push_back("manifest.json");
  return result;
}

SweepResult capacity_sweep(const ScenarioConfig& base, const SweepConfig& sweep, const std::string& out_dir,
                           const RunOptions& options) {
  if (sweep.values.size() < 3) throw ConfigError("a capacity sweep needs at least 3 axis values");
  SweepResult result;
  result.axis = sweep.axis;
  const PreparedData data = prepare_data(base);
  const Problem problem = build_problem(base, data);
  const UnparamSolution unparam = solve_unparam_dual(problem, base.unparam);
  const int full = static_cast<int>(problem.dataset().input_dim());

  struct Job {
    int value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int v : sweep.values) {
    for (std::uint64_t s : base.seeds) jobs.push_back({v, s});
  }
  std::vector<SweepRow> rows(jobs.size());
  std::vector<DualTrace> traces(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), options.threads, [&](std::size_t k) {
    ScenarioConfig cfg = base;
    if (sweep.axis == "projection") {
      cfg.model.projection = jobs[k].value;
    } else {
      cfg.model.hidden = jobs[k].value;
    }
    SweepRow& row = rows[k];
    row.axis_value = sweep.axis == "projection" && jobs[k].value == 0 ? full : jobs[k].value;
    row.seed = jobs[k].seed;
    row.nu = row.gamma2 = kNaN;
    try {
      const ParamModel init = initial_model(cfg, problem, row.seed);
      AscentConfig ac = cfg.ascent;
      ac.seed = derive_seed(row.seed, kStreamBatch);
      ac.oracle.seed = derive_seed(row.seed, kStreamInit);
      traces[k] = run_dual_ascent(problem, init, ac);
      if (traces[k].aborted) throw NumericalError(traces[k].diagnostic);
      row.max_violation = oscillation_stats(traces[k], sweep.settle_frac).max_violation;
      const ParamModel& last = traces[k].checkpoints.at(traces[k].length());
      row.accuracy = data.test.empty()
                         ? kNaN
                         : score_outputs(problem, data.test, last.predict(encode_samples(data.test, problem.dataset().schema()))).second;
      if (sweep.certificates) {
        ScenarioConfig cert_cfg = cfg;
        cert_cfg.certificates.tilted = false;
        const CertificateReport rep = certify_run(cert_cfg, problem, unparam, traces[k], row.seed);
        row.nu = rep.constants.nu;
        row.gamma2 = rep.gamma2;
      }
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });

  std::vector<std::string> files;
  if (options.write) {
    fs::create_directories(out_dir);
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      const std::string rel = "sweep/" + sweep.axis + "_" + std::to_string(rows[k].axis_value) + "/" + seed_dir(jobs[k].seed);
      if (!traces[k].records.empty()) {
        write_trace_csv((fs::path(out_dir) / rel / "trace.csv").string(), traces[k]);
        files.push_back(rel + "/trace.csv");
      }
      if (!errors[k].empty()) {
        write_json_file((fs::path(out_dir) / rel / "error.json").string(), error_record("sweep", errors[k]));
        files.push_back(rel + "/error.json");
      }
    }
  }
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (errors[k].empty()) continue;
    result.note += (result.note.empty() ? "" : "; ") + std::string("axis ") + std::to_string(rows[k].axis_value) +
                   " seed " + std::to_string(jobs[k].seed) + ": " + errors[k];
  }

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a].axis_value != rows[b].axis_value ? rows[a].axis_value < rows[b].axis_value : rows[a].seed < rows[b].seed;
  });
  for (std::size_t k : order) {
    if (errors[k].empty()) result.rows.push_back(rows[k]);
  }
  std::vector<double> caps, viols;
  for (std::size_t i = 0; i < result.rows.size();) {
    std::size_t j = i;
    std::vector<double> v, a, n, g;
    while (j < result.rows.size() && result.rows[j].axis_value == result.rows[i].axis_value) {
      v.push_back(result.rows[j].max_violation);
      a.push_back(result.rows[j].accuracy);
      n.push_back(result.rows[j].nu);
      g.push_back(result.rows[j].gamma2);
      ++j;
    }
    result.summary.push_back({result.rows[i].axis_value, median(v), mean(a), median(n), median(g)});
    caps.push_back(result.rows[i].axis_value);
    viols.push_back(result.summary.back().median_max_violation);
    i = j;
  }
  if (caps.size() < 3) {
    result.note += (result.note.empty() ? "" : "; ") + std::string("fewer than 3 distinct axis values; trend test skipped");
  } else {
    result.spearman = spearman(caps, viols);
    if (!result.spearman) result.note += (result.note.empty() ? "" : "; ") + std::string("flat result; trend test skipped");
  }
  if (options.write) {
    write_text_file((fs::path(out_dir) / "sweep.csv").string(), sweep_csv(result));
    files.push_back("sweep.csv");
    Json summary = Json::array();
    for (const SweepSummaryRow& s : result.summary) {
      summary.push_back(Json{{"axis_value", s.axis_value},
                             {"median_max_violation", s.median_max_violation},
                             {"mean_accuracy", std::isnan(s.mean_accuracy) ? Json(nullptr) : Json(s.mean_accuracy)},
                             {"median_nu", std::isnan(s.median_nu) ? Json(nullptr) : Json(s.median_nu)},
                             {"median_gamma2", std::isnan(s.median_gamma2) ? Json(nullptr) : Json(s.median_gamma2)}});
    }
    write_json_file((fs::path(out_dir) / "sweep.json").string(),
                    Json{{"schema_version", kScenarioSchemaVersion},
                         {"axis", result.axis},
                         {"summary", summary},
                         {"spearman", result.spearman ? Json(*result.spearman) : Json(nullptr)},
                         {"note", result.note}});
    files.push_back("sweep.json");
    write_manifest(out_dir, files);
  }
  return result;
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("spearman inputs differ in length");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

std::string predictors_csv(const std::vector<PredictorRow>& rows, int m) {
  std::string out = "seed,predictor,accuracy,test_objective,max_violation";
  for (int i = 1; i <= m; ++i) out += ",slack_" + std::to_string(i);
  out += "\n";
  for (const PredictorRow& r : rows) {
    out += std::to_string(r.seed) + "," + to_string(r.kind) + "," + format_double(r.accuracy) + "," +
           format_double(r.test_objective) + "," + format_double(r.max_violation);
    for (Eigen::Index i = 0; i < r.slacks.size(); ++i) out += "," + format_double(r.slacks[i]);
    out += "\n";
  }
  return out;
}

std::string sweep_csv(const SweepResult& result) {
  std::string out = "axis,axis_value,seed,max_violation,accuracy,nu,gamma2\n";
  for (const SweepRow& r : result.rows) {
    out += result.axis + "," + std::to_string(r.axis_value) + "," + std::to_string(r.seed) + "," +
           format_double(r.max_violation) + "," + format_double(r.accuracy) + "," + format_double(r.nu) + "," +
           format_double(r.gamma2) + "\n";
  }
  return out;
}

}  // namespace duallearn
