#include "duallearn/models.hpp"

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

struct Cache {
  Eigen::MatrixXd xp;   // projected inputs (empty when no projection)
  Eigen::MatrixXd act;  // hidden activations (mlp2)
  Eigen::MatrixXd out;  // model outputs (after softmax when enabled)
};

const Eigen::MatrixXd& net_inputs(const ParamModel& m, const Eigen::MatrixXd& X, Cache& c) {
  if (X.cols() != m.input_dim) throw StructuralError("model input dimension mismatch");
  if (m.projection.size() == 0) return X;
  c.xp.noalias() = X * m.projection.transpose();
  return c.xp;
}

void softmax_rows(Eigen::MatrixXd& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - mx).exp();
    z.row(r) /= z.row(r).sum();
  }
}

void run_forward(const ParamModel& m, const Eigen::MatrixXd& X, Cache& c, bool apply_softmax) {
  const Eigen::MatrixXd& xin = net_inputs(m, X, c);
  const Eigen::Index d = m.net_input_dim();
  const Eigen::Index K = m.output_dim;
  if (m.theta.size() != m.num_params()) throw StructuralError("theta length does not match architecture");
  const double* t = m.theta.data();
  if (m.arch == Arch::kLinear) {
    Eigen::Map<const Eigen::MatrixXd> W(t, K, d);
    Eigen::Map<const Eigen::VectorXd> b(t + K * d, K);
    c.out.noalias() = xin * W.transpose();
    c.out.rowwise() += b.transpose();
  } else {
    const Eigen::Index H = m.hidden;
    Eigen::Map<const Eigen::MatrixXd> W1(t, H, d);
    Eigen::Map<const Eigen::VectorXd> b1(t + H * d, H);
    Eigen::Map<const Eigen::MatrixXd> W2(t + H * d + H, K, H);
    Eigen::Map<const Eigen::VectorXd> b2(t + H * d + H + K * H, K);
    c.act.noalias() = xin * W1.transpose();
    c.act.rowwise() += b1.transpose();
    c.act = (1.0 + (-c.act.array()).exp()).inverse().matrix();
    c.out.noalias() = c.act * W2.transpose();
    c.out.rowwise() += b2.transpose();
  }
  if (apply_softmax && m.softmax) softmax_rows(c.out);
}

Eigen::VectorXd run_backward(const ParamModel& m, const Eigen::MatrixXd& X, const Cache& c, const Eigen::MatrixXd& G) {
  const Eigen::MatrixXd& xin = m.projection.size() ? c.xp : X;
  const Eigen::Index d = m.net_input_dim();
  const Eigen::Index K = m.output_dim;
  Eigen::MatrixXd dout = G;
  if (m.softmax) {
    const Eigen::VectorXd inner = (c.out.array() * G.array()).rowwise().sum();
    dout = c.out.array() * (G.colwise() - inner).array();
  }
  Eigen::VectorXd grad(m.num_params());
  double* t = grad.data();
  if (m.arch == Arch::kLinear) {
    Eigen::Map<Eigen::MatrixXd>(t, K, d).noalias() = dout.transpose() * xin;
    Eigen::Map<Eigen::VectorXd>(t + K * d, K) = dout.colwise().sum().transpose();
  } else {
    const Eigen::Index H = m.hidden;
    Eigen::Map<const Eigen::MatrixXd> W2(m.theta.data() + H * d + H, K, H);
    Eigen::MatrixXd dz = dout * W2;
    dz.array() *= c.act.array() * (1.0 - c.act.array());
    Eigen::Map<Eigen::MatrixXd>(t, H, d).noalias() = dz.transpose() * xin;
    Eigen::Map<Eigen::VectorXd>(t + H * d, H) = dz.colwise().sum().transpose();
    Eigen::Map<Eigen::MatrixXd>(t + H * d + H, K, H).noalias() = dout.transpose() * c.act;
    Eigen::Map<Eigen::VectorXd>(t + H * d + H + K * H, K) = dout.colwise().sum().transpose();
  }
  return grad;
}

Eigen::MatrixXd active_inputs(const Problem& p) {
  const auto& rows = p.active_points();
  const Eigen::MatrixXd& all = p.dataset().inputs();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), all.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) X.row(static_cast<Eigen::Index>(r)) = all.row(static_cast<Eigen::Index>(rows[r]));
  return X;
}

FunctionTable scatter(const Problem& p, const Eigen::MatrixXd& active_out) {
  FunctionTable T = p.neutral_table();
  const auto& rows = p.active_points();
  for (std::size_t r = 0; r < rows.size(); ++r) T.row(static_cast<Eigen::Index>(rows[r])) = active_out.row(static_cast<Eigen::Index>(r));
  return T;
}

Eigen::MatrixXd gather(const Problem& p, const FunctionTable& T) {
  const auto& rows = p.active_points();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), T.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = T.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

void check_compatible(const ParamModel& m, const Problem& p) {
  if (m.input_dim != static_cast<int>(p.dataset().input_dim()) || m.output_dim != p.output_dim()) {
    throw StructuralError("model dimensions do not match the problem");
  }
  if (m.softmax != (p.geometry() == OutputGeometry::kSimplex)) {
    throw StructuralError("model output map does not match the problem geometry");
  }
}

using Objective = std::function<double(const ParamModel&, Eigen::VectorXd*)>;

OracleResult descend(const ParamModel& init, const OracleConfig& cfg, const Objective& f) {
  if (!(cfg.step_size > 0.0) || cfg.max_steps < 0) throw ConfigError("oracle step size must be positive");
  OracleResult res;
  res.model = init;
  Eigen::VectorXd g;
  double v = f(res.model, &g);
  if (!std::isfinite(v)) throw NumericalError("non-finite Lagrangian at oracle initialization");
  res.init_lagrangian = v;
  res.accepted.push_back(v);
  const double blowup = v + 10.0 * std::max(1.0, std::abs(v));

  const Eigen::Index P = init.theta.size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(P), m2 = Eigen::VectorXd::Zero(P);
  double alpha = cfg.step_size;
  int adam_t = 0;
  ParamModel trial = init;
  Eigen::VectorXd gt;
  const double tol = std::max(cfg.grad_tol, cfg.rho_target);
  for (int step = 0; step < cfg.max_steps; ++step) {
    if (g.norm() <= tol) break;
    const Eigen::VectorXd gg = g + cfg.weight_decay * res.model.theta;
    Eigen::VectorXd dir;
    switch (cfg.optimizer) {
      case Optimizer::kGradientDescent: dir = gg; break;
      case Optimizer::kMomentum:
        m1 = cfg.momentum * m1 + gg;
        dir = m1;
        break;
      case Optimizer::kAdam: {
        ++adam_t;
        m1 = 0.9 * m1 + 0.1 * gg;
        m2 = 0.999 * m2 + 0.001 * gg.cwiseAbs2();
        const double c1 = 1.0 - std::pow(0.9, adam_t);
        const double c2 = 1.0 - std::pow(0.999, adam_t);
        dir = (m1 / c1).array() / ((m2 / c2).array().sqrt() + 1e-8);
        break;
      }
    }
    bool ok = false;
    double vt = 0.0;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
      for (int h = 0; h <= 30; ++h) {
        trial.theta = res.model.theta - alpha * dir;
        vt = f(trial, &gt);
        if (!cfg.backtracking) {
          if (!std::isfinite(vt) || vt > blowup) throw DivergenceError("primal oracle diverged", alpha / 10.0);
          ok = true;
          break;
        }
        if (std::isfinite(vt) && vt <= v) {
          ok = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!ok && cfg.optimizer != Optimizer::kGradientDescent) {
        // Stale momentum can point uphill; restart from the plain gradient.
        m1.setZero();
        m2.setZero();
        adam_t = 0;
        dir = gg;
        alpha = cfg.step_size;
      } else {
        break;
      }
    }
    if (!ok) break;
    std::swap(res.model.theta, trial.theta);
    v = vt;
    g.swap(gt);
    res.accepted.push_back(v);
    ++res.steps;
    alpha = std::min(cfg.step_size, 2.0 * alpha);
  }
  res.lagrangian = v;
  res.gap_surrogate = g.norm();
  return res;
}

}  // namespace

const char* to_string(Arch arch) { return arch == Arch::kLinear ? "linear" : "mlp2"; }

Arch parse_arch(const std::string& name) {
  if (name == "linear") return Arch::kLinear;
  if (name == "mlp2") return Arch::kMlp2;
  throw ConfigError("unknown model architecture '" + name + "'");
}

const char* to_string(Optimizer opt) {
  switch (opt) {
    case Optimizer::kGradientDescent: return "gd";
    case Optimizer::kMomentum: return "momentum";
    case Optimizer::kAdam: return "adam";
  }
  return "unknown";
}

Optimizer parse_optimizer(const std::string& name) {
  if (name == "gd") return Optimizer::kGradientDescent;
  if (name == "momentum") return Optimizer::kMomentum;
  if (name == "adam") return Optimizer::kAdam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

Eigen::Index ParamModel::num_params() const {
  const Eigen::Index d = net_input_dim();
  const Eigen::Index K = output_dim;
  if (arch == Arch::kLinear) return K * d + K;
  const Eigen::Index H = hidden;
  return H * d + H + K * H + K;
}

Eigen::MatrixXd ParamModel::logits(const Eigen::MatrixXd& X) const {
  Cache c;
  run_forward(*this, X, c, false);
  return c.out;
}

Eigen::MatrixXd ParamModel::predict(const Eigen::MatrixXd& X) const {
  Cache c;
  run_forward(*this, X, c, true);
  return c.out;
}

Eigen::VectorXd ParamModel::backprop(const Eigen::MatrixXd& X, const Eigen::MatrixXd& G) const {
  Cache c;
  run_forward(*this, X, c, true);
  return run_backward(*this, X, c, G);
}

Eigen::MatrixXd random_projection(int rows, int input_dim, std::uint64_t seed) {
  if (rows < 1 || input_dim < 1) throw ConfigError("projection dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  Eigen::MatrixXd P(rows, input_dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < input_dim; ++c) P(r, c) = normal(rng);
  }
  return P;
}

ParamModel make_model(Arch arch, int hidden, int input_dim, int output_dim, bool softmax, std::uint64_t seed,
                      Eigen::MatrixXd projection) {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("model dimensions must be positive");
  if (arch == Arch::kMlp2 && hidden < 1) throw ConfigError("mlp2 needs a positive hidden width");
  if (projection.size() && projection.cols() != input_dim) throw ConfigError("projection width must equal input_dim");
  ParamModel m;
  m.arch = arch;
  m.hidden = arch == Arch::kMlp2 ? hidden : 0;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  m.softmax = softmax;
  m.projection = std::move(projection);
  m.theta = Eigen::VectorXd::Zero(m.num_params());
  if (arch == Arch::kMlp2) {
    const Eigen::Index d = m.net_input_dim();
    const double r = 1.0 / std::sqrt(static_cast<double>(d));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-r, r);
    for (Eigen::Index i = 0; i < m.hidden * d + m.hidden; ++i) m.theta[i] = unif(rng);
  }
  return m;
}

ParamModel make_model(Arch arch, int hidden, const Problem& problem, std::uint64_t seed, Eigen::MatrixXd projection) {
  return make_model(arch, hidden, static_cast<int>(problem.dataset().input_dim()), problem.output_dim(),
                    problem.geometry() == OutputGeometry::kSimplex, seed, std::move(projection));
}

ParamModel embed(const ParamModel& model, int hidden, const Eigen::MatrixXd& projection, std::uint64_t seed) {
  const Eigen::Index d_old = model.net_input_dim();
  if (model.projection.size()) {
    if (projection.rows() < model.projection.rows() || projection.cols() != model.projection.cols() ||
        projection.topRows(model.projection.rows()) != model.projection) {
      throw ConfigError("target projection does not extend the model's projection");
    }
  } else if (projection.size()) {
    throw ConfigError("cannot embed an unprojected model into a projected family");
  }
  ParamModel out = make_model(model.arch, std::max(hidden, model.hidden), model.input_dim, model.output_dim,
                              model.softmax, seed, projection);
  const Eigen::Index d = out.net_input_dim();
  const Eigen::Index K = model.output_dim;
  const double* src = model.theta.data();
  double* dst = out.theta.data();
  if (model.arch == Arch::kLinear) {
    Eigen::Map<Eigen::MatrixXd> W(dst, K, d);
    W.setZero();
    W.leftCols(d_old) = Eigen::Map<const Eigen::MatrixXd>(src, K, d_old);
    Eigen::Map<Eigen::VectorXd>(dst + K * d, K) = Eigen::Map<const Eigen::VectorXd>(src + K * d_old, K);
    return out;
  }
  const Eigen::Index Ho = model.hidden;
  const Eigen::Index H = out.hidden;
  Eigen::Map<Eigen::MatrixXd> W1(dst, H, d);
  W1.topRows(Ho).setZero();
  W1.topLeftCorner(Ho, d_old) = Eigen::Map<const Eigen::MatrixXd>(src, Ho, d_old);
  Eigen::Map<Eigen::VectorXd>(dst + H * d, H).head(Ho) = Eigen::Map<const Eigen::VectorXd>(src + Ho * d_old, Ho);
  Eigen::Map<Eigen::MatrixXd> W2(dst + H * d + H, K, H);
  W2.setZero();
  W2.leftCols(Ho) = Eigen::Map<const Eigen::MatrixXd>(src + Ho * d_old + Ho, K, Ho);
  Eigen::Map<Eigen::VectorXd>(dst + H * d + H + K * H, K) =
      Eigen::Map<const Eigen::VectorXd>(src + Ho * d_old + Ho + K * Ho, K);
  return out;
}

FunctionTable forward(const ParamModel& model, const Problem& problem) {
  check_compatible(model, problem);
  return model.predict(problem.dataset().inputs());
}

FunctionTable forward_active(const ParamModel& model, const Problem& problem) {
  check_compatible(model, problem);
  return scatter(problem, model.predict(active_inputs(problem)));
}

LagrangianGrad lagrangian_and_grad(const ParamModel& model, const Problem& problem, const Eigen::VectorXd& lambda) {
  check_compatible(model, problem);
  if (lambda.size() != static_cast<Eigen::Index>(problem.num_constraints())) {
    throw StructuralError("dual vector has wrong length");
  }
  if ((lambda.array() < 0.0).any()) throw StructuralError("dual vector must be nonnegative");
  const Eigen::MatrixXd X = active_inputs(problem);
  Eigen::VectorXd coef(lambda.size() + 1);
  coef << 1.0, lambda;
  Cache c;
  run_forward(model, X, c, true);
  FunctionTable G;
  const double v = problem.weighted_value_and_gradient(coef, scatter(problem, c.out), &G) - lambda.dot(problem.levels());
  if (!std::isfinite(v)) throw NumericalError("non-finite Lagrangian");
  return {v, run_backward(model, X, c, gather(problem, G))};
}

OracleResult primal_oracle(const Problem& problem, const Eigen::VectorXd& lambda, const OracleConfig& cfg,
                           const ParamModel& init) {
  check_compatible(init, problem);
  if ((lambda.array() < 0.0).any()) throw StructuralError("dual vector must be nonnegative");
  const Eigen::MatrixXd X = active_inputs(problem);
  Eigen::VectorXd coef(lambda.size() + 1);
  coef << 1.0, lambda;
  const double offset = lambda.dot(problem.levels());
  Cache c;
  FunctionTable G;
  Objective f = [&](const ParamModel& m, Eigen::VectorXd* grad) {
    run_forward(m, X, c, true);
    const double v = problem.weighted_value_and_gradient(coef, scatter(problem, c.out), grad ? &G : nullptr);
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    if (grad) *grad = run_backward(m, X, c, gather(problem, G));
    return v - offset;
  };
  return descend(init, cfg, f);
}

FitResult fit_to_targets(const FunctionTable& targets, const ParamModel& init, const OracleConfig& cfg,
                         const Problem& problem) {
  check_compatible(init, problem);
  if (targets.rows() != static_cast<Eigen::Index>(problem.num_points()) || targets.cols() != problem.output_dim()) {
    throw StructuralError("fit targets do not cover the support");
  }
  const Eigen::MatrixXd X = active_inputs(problem);
  const Eigen::MatrixXd T = gather(problem, targets);
  Eigen::VectorXd w(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    w[r] = problem.dataset().measure()[static_cast<Eigen::Index>(problem.active_points()[static_cast<std::size_t>(r)])];
  }
  FitResult res;
  if (init.arch == Arch::kLinear && !init.softmax) {
    Cache c;
    const Eigen::MatrixXd& xin = net_inputs(init, X, c);
    Eigen::MatrixXd A(xin.rows(), xin.cols() + 1);
    A << xin, Eigen::VectorXd::Ones(xin.rows());
    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::MatrixXd beta =
        (sw.asDiagonal() * A).completeOrthogonalDecomposition().solve(sw.asDiagonal() * T);  // (d+1) x K
    res.model = init;
    const Eigen::Index d = init.net_input_dim();
    const Eigen::Index K = init.output_dim;
    Eigen::Map<Eigen::MatrixXd>(res.model.theta.data(), K, d) = beta.topRows(d).transpose();
    Eigen::Map<Eigen::VectorXd>(res.model.theta.data() + K * d, K) = beta.row(d).transpose();
  } else {
    Cache c;
    Objective f = [&](const ParamModel& m, Eigen::VectorXd* grad) {
      run_forward(m, X, c, true);
      const Eigen::MatrixXd diff = c.out - T;
      const double v = (diff.rowwise().squaredNorm().array() * w.array()).sum();
      if (grad) *grad = run_backward(m, X, c, 2.0 * (diff.array().colwise() * w.array()).matrix());
      return v;
    };
    res.model = descend(init, cfg, f).model;
  }
  res.residual = problem.l2_distance(forward(res.model, problem), targets);
  return res;
}

}  // namespace duallearn
