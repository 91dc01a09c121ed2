#include "duallearn/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool in_group(const Sample& s, const std::optional<GroupFilter>& g) {
  return !g || s.protected_attrs[static_cast<std::size_t>(g->attribute)] == g->value;
}

Eigen::VectorXd target_vector(double label, int K) {
  if (K == 1) return Eigen::VectorXd::Constant(1, label);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(K);
  t[static_cast<Eigen::Index>(label)] = 1.0;
  return t;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kSquaredError: return "squared_error";
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kKlPair: return "kl_pair";
    case LossKind::kMeanOutput: return "mean_output";
  }
  return "unknown";
}

const char* to_string(OutputGeometry geometry) {
  return geometry == OutputGeometry::kReals ? "unconstrained_reals" : "probability_simplex";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "squared_error") return LossKind::kSquaredError;
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "kl_pair") return LossKind::kKlPair;
  if (name == "mean_output") return LossKind::kMeanOutput;
  throw ConfigError("unknown loss kind '" + name + "'");
}

OutputGeometry parse_geometry(const std::string& name) {
  if (name == "unconstrained_reals" || name == "reals") return OutputGeometry::kReals;
  if (name == "probability_simplex" || name == "probability_simplex_via_logits" || name == "simplex") {
    return OutputGeometry::kSimplex;
  }
  throw ConfigError("unknown output geometry '" + name + "'");
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double v = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    if (q[k] <= 0.0) return kInf;
    v += p[k] * std::log(p[k] / q[k]);
  }
  return v;
}

Problem::Problem(ProblemSpec spec) {
  auto c = std::make_shared<Compiled>();
  c->spec = std::move(spec);
  data_ = c;
  compile();
}

void Problem::compile() {
  auto c = std::const_pointer_cast<Compiled>(data_);
  ProblemSpec& spec = c->spec;
  if (spec.output_dim < 1) throw StructuralError("output_dim must be positive");
  if (spec.constraints.empty()) throw StructuralError("problem needs at least one constraint");
  const bool simplex = spec.geometry == OutputGeometry::kSimplex;
  if (simplex && spec.output_dim < 2) throw StructuralError("simplex geometry needs output_dim >= 2");
  c->K = spec.output_dim;
  c->q = simplex ? c->K - 1 : c->K;

  std::vector<Transform> transforms;
  auto check_loss = [&](const PointwiseLoss& loss, const std::string& where) {
    if (!(loss.tau >= 0.0) || !std::isfinite(loss.tau)) throw ConfigError(where + ": tau must be >= 0");
    if ((loss.kind == LossKind::kCrossEntropy || loss.kind == LossKind::kKlPair) && !simplex) {
      throw ConfigError(where + ": " + to_string(loss.kind) + " requires probability outputs");
    }
  };
  check_loss(spec.objective, "objective");
  if (spec.objective.kind == LossKind::kKlPair) throw ConfigError("objective cannot be kl_pair");
  for (std::size_t i = 0; i < spec.constraints.size(); ++i) {
    const ConstraintSpec& cs = spec.constraints[i];
    const std::string where = "constraint " + std::to_string(i + 1);
    check_loss(cs.loss, where);
    if (!std::isfinite(cs.level)) throw ConfigError(where + ": level must be finite");
    if (cs.loss.kind == LossKind::kKlPair && !cs.transform) throw StructuralError(where + ": kl_pair needs a transform");
    if (cs.transform && cs.loss.kind != LossKind::kKlPair) {
      throw StructuralError(where + ": only kl_pair constraints take a transform");
    }
    if (cs.loss.kind == LossKind::kMeanOutput && (cs.component < 0 || cs.component >= c->K)) {
      throw StructuralError(where + ": mean_output component out of range");
    }
    if (cs.group) {
      if (cs.group->attribute < 0 || static_cast<std::size_t>(cs.group->attribute) >= spec.schema.size()) {
        throw StructuralError(where + ": group attribute out of range");
      }
    }
    if (cs.transform && std::find(transforms.begin(), transforms.end(), *cs.transform) == transforms.end()) {
      transforms.push_back(*cs.transform);
    }
  }
  const bool needs_class_labels = spec.objective.kind == LossKind::kCrossEntropy ||
                                  (spec.objective.kind == LossKind::kSquaredError && c->K > 1);
  for (std::size_t i = 0; i < spec.samples.size(); ++i) {
    const double y = spec.samples[i].label;
    if (needs_class_labels && (y != std::floor(y) || y < 0 || y >= c->K)) {
      throw StructuralError("sample " + std::to_string(i) + " label is not a class index below output_dim");
    }
  }

  c->dataset = Dataset(spec.samples, spec.schema, transforms);
  const Dataset& ds = c->dataset;
  const std::size_t n = ds.support_size();
  const auto N = static_cast<Eigen::Index>(n);
  const Eigen::VectorXd& pi = ds.measure();

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> pair_acc;
  auto build = [&](std::size_t idx, const PointwiseLoss& loss, const ConstraintSpec* cs) {
    LossData L;
    L.kind = loss.kind;
    L.tau = loss.tau;
    if (cs) {
      L.scale = cs->scale;
      L.component = cs->component;
      L.group = cs->group;
      if (cs->transform) L.transform = ds.find_transform(*cs->transform);
    }
    if (L.group) {
      L.group_mass = 0.0;
      for (std::size_t s = 0; s < ds.num_source_samples(); ++s) {
        if (in_group(ds.sample(s), L.group)) L.group_mass += ds.sample(s).weight;
      }
      if (!(L.group_mass > 0.0)) throw StructuralError("constraint group has no mass");
    }
    switch (L.kind) {
      case LossKind::kSquaredError:
        L.mass = Eigen::VectorXd::Zero(N);
        L.s1 = Eigen::MatrixXd::Zero(N, c->K);
        L.s2 = Eigen::VectorXd::Zero(N);
        break;
      case LossKind::kCrossEntropy: L.counts = Eigen::MatrixXd::Zero(N, c->K); break;
      case LossKind::kMeanOutput: L.omega = Eigen::VectorXd::Zero(N); break;
      case LossKind::kKlPair: break;
    }
    for (std::size_t s = 0; s < ds.num_source_samples(); ++s) {
      const Sample& smp = ds.sample(s);
      if (smp.weight == 0.0 || !in_group(smp, L.group)) continue;
      const double w = smp.weight / L.group_mass;
      const std::size_t j = ds.point_of(s);
      const auto J = static_cast<Eigen::Index>(j);
      switch (L.kind) {
        case LossKind::kSquaredError: {
          const Eigen::VectorXd t = target_vector(smp.label, c->K);
          L.mass[J] += w;
          L.s1.row(J) += w * t.transpose();
          L.s2[J] += w * t.squaredNorm();
          break;
        }
        case LossKind::kCrossEntropy:
          L.counts(J, static_cast<Eigen::Index>(smp.label)) += w;
          break;
        case LossKind::kMeanOutput: L.omega[J] += w; break;
        case LossKind::kKlPair: {
          const CounterfactualImage img = ds.point_image(j, *L.transform);
          if (img.fixed_point || img.index == j) break;
          pair_acc[{idx, j, img.index}] += w;
          break;
        }
      }
    }
    c->losses.push_back(std::move(L));
  };
  build(0, spec.objective, nullptr);
  for (std::size_t i = 0; i < spec.constraints.size(); ++i) build(i + 1, spec.constraints[i].loss, &spec.constraints[i]);
  for (const auto& [key, omega] : pair_acc) {
    c->pairs.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), omega});
  }

  c->active_mask.assign(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    if (pi[static_cast<Eigen::Index>(j)] > 0.0) {
      c->active_mask[j] = true;
      c->active.push_back(j);
    }
  }
  UnionFind uf(n);
  for (const PairTerm& p : c->pairs) {
    if (!c->active_mask[p.src] || !c->active_mask[p.img]) throw StructuralError("pair term touches a zero-measure point");
    uf.unite(p.src, p.img);
  }
  c->block_of.assign(n, static_cast<std::size_t>(-1));
  c->local_index.assign(n, 0);
  std::map<std::size_t, std::size_t> root_block;
  for (std::size_t j : c->active) {
    auto [it, inserted] = root_block.emplace(uf.find(j), c->blocks.size());
    if (inserted) c->blocks.emplace_back();
    c->block_of[j] = it->second;
    c->local_index[j] = c->blocks[it->second].size();
    c->blocks[it->second].push_back(j);
  }
  c->block_pairs.assign(c->blocks.size(), {});
  for (std::size_t p = 0; p < c->pairs.size(); ++p) c->block_pairs[c->block_of[c->pairs[p].src]].push_back(p);

  const LossData& obj = c->losses[0];
  double curv = kInf;
  switch (obj.kind) {
    case LossKind::kSquaredError:
      for (std::size_t j : c->active) curv = std::min(curv, 2.0 * obj.mass[static_cast<Eigen::Index>(j)] / pi[static_cast<Eigen::Index>(j)]);
      break;
    case LossKind::kCrossEntropy:
      if (c->K == 2) {
        for (std::size_t j : c->active) {
          curv = std::min(curv, obj.counts.row(static_cast<Eigen::Index>(j)).sum() / (2.0 * pi[static_cast<Eigen::Index>(j)]));
        }
      } else {
        curv = 0.0;
      }
      break;
    default: curv = 0.0; break;
  }
  if (!std::isfinite(curv)) curv = 0.0;
  c->mu0 = 2.0 * obj.tau + curv;

  levels_.resize(static_cast<Eigen::Index>(spec.constraints.size()));
  for (std::size_t i = 0; i < spec.constraints.size(); ++i) levels_[static_cast<Eigen::Index>(i)] = spec.constraints[i].level;
}

FunctionTable Problem::neutral_table() const {
  const auto n = static_cast<Eigen::Index>(num_points());
  if (geometry() == OutputGeometry::kSimplex) return FunctionTable::Constant(n, data_->K, 1.0 / data_->K);
  return FunctionTable::Zero(n, data_->K);
}

void Problem::check_table(const FunctionTable& phi) const {
  if (phi.rows() != static_cast<Eigen::Index>(num_points()) || phi.cols() != data_->K) {
    throw StructuralError("function table shape does not match the problem support");
  }
  for (std::size_t j : data_->active) {
    const auto J = static_cast<Eigen::Index>(j);
    if (!phi.row(J).allFinite()) throw NumericalError("non-finite output", dataset().representative_sample(j));
    if (geometry() == OutputGeometry::kSimplex) {
      if ((phi.row(J).array() < 0.0).any() || std::abs(phi.row(J).sum() - 1.0) > 1e-8) {
        throw StructuralError("output row is not a probability vector");
      }
    }
  }
}

double Problem::point_unary(std::size_t j, const Eigen::VectorXd& coef, const Eigen::VectorXd& x,
                            Eigen::VectorXd* g, Eigen::MatrixXd* h) const {
  const auto J = static_cast<Eigen::Index>(j);
  const double pij = dataset().measure()[J];
  const int K = data_->K;
  double v = 0.0;
  for (std::size_t i = 0; i < data_->losses.size(); ++i) {
    const double ci = coef[static_cast<Eigen::Index>(i)];
    if (ci == 0.0) continue;
    const LossData& L = data_->losses[i];
    if (L.tau > 0.0) {
      v += ci * L.tau * pij * x.squaredNorm();
      if (g) *g += ci * 2.0 * L.tau * pij * x;
      if (h) h->diagonal().array() += ci * 2.0 * L.tau * pij;
    }
    switch (L.kind) {
      case LossKind::kSquaredError: {
        const double m = L.mass[J];
        if (m == 0.0) break;
        v += ci * (m * x.squaredNorm() - 2.0 * x.dot(L.s1.row(J).transpose()) + L.s2[J]);
        if (g) *g += ci * 2.0 * (m * x - L.s1.row(J).transpose());
        if (h) h->diagonal().array() += ci * 2.0 * m;
        break;
      }
      case LossKind::kCrossEntropy:
        for (int k = 0; k < K; ++k) {
          const double y = L.counts(J, k);
          if (y == 0.0) continue;
          if (x[k] <= 0.0) return kInf;
          v -= ci * y * std::log(x[k]);
          if (g) (*g)[k] -= ci * y / x[k];
          if (h) (*h)(k, k) += ci * y / (x[k] * x[k]);
        }
        break;
      case LossKind::kMeanOutput: {
        const double w = L.omega[J];
        if (w == 0.0) break;
        v += ci * w * L.scale * x[L.component];
        if (g) (*g)[L.component] += ci * w * L.scale;
        break;
      }
      case LossKind::kKlPair: break;
    }
  }
  return v;
}

double Problem::raw_loss(std::size_t i, const FunctionTable& phi) const {
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data_->losses.size()));
  coef[static_cast<Eigen::Index>(i)] = 1.0;
  return weighted_value_and_gradient(coef, phi, nullptr);
}

Eigen::VectorXd Problem::raw_losses(const FunctionTable& phi) const {
  const auto n = static_cast<Eigen::Index>(data_->losses.size());
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = raw_loss(static_cast<std::size_t>(i), phi);
  return out;
}

Eigen::VectorXd Problem::slacks(const FunctionTable& phi) const {
  const Eigen::VectorXd raw = raw_losses(phi);
  return raw.tail(raw.size() - 1) - levels_;
}

double Problem::lagrangian(const FunctionTable& phi, const Eigen::VectorXd& lambda) const {
  if (lambda.size() != levels_.size()) throw StructuralError("dual vector has wrong length");
  Eigen::VectorXd coef(lambda.size() + 1);
  coef << 1.0, lambda;
  return weighted_value_and_gradient(coef, phi, nullptr) - lambda.dot(levels_);
}

double Problem::weighted_value_and_gradient(const Eigen::VectorXd& coef, const FunctionTable& phi,
                                            FunctionTable* grad) const {
  if (phi.rows() != static_cast<Eigen::Index>(num_points()) || phi.cols() != data_->K) {
    throw StructuralError("function table shape does not match the problem support");
  }
  const int K = data_->K;
  if (grad) *grad = FunctionTable::Zero(phi.rows(), K);
  double v = 0.0;
  Eigen::VectorXd g(K);
  for (std::size_t j : data_->active) {
    const auto J = static_cast<Eigen::Index>(j);
    g.setZero();
    const double u = point_unary(j, coef, phi.row(J).transpose(), grad ? &g : nullptr, nullptr);
    if (!std::isfinite(u)) return kInf;
    v += u;
    if (grad) grad->row(J) += g.transpose();
  }
  for (const PairTerm& p : data_->pairs) {
    const double ci = coef[static_cast<Eigen::Index>(p.loss)];
    if (ci == 0.0) continue;
    const auto S = static_cast<Eigen::Index>(p.src);
    const auto I = static_cast<Eigen::Index>(p.img);
    for (int k = 0; k < K; ++k) {
      const double a = phi(S, k);
      const double b = phi(I, k);
      if (a <= 0.0) continue;
      if (b <= 0.0) return kInf;
      const double lr = std::log(a / b);
      v += ci * p.omega * a * lr;
      if (grad) {
        (*grad)(S, k) += ci * p.omega * (lr + 1.0);
        (*grad)(I, k) -= ci * p.omega * a / b;
      }
    }
  }
  if (!std::isfinite(v)) return kInf;
  return v;
}

FunctionTable Problem::weighted_gradient(const Eigen::VectorXd& coef, const FunctionTable& phi) const {
  FunctionTable g;
  weighted_value_and_gradient(coef, phi, &g);
  return g;
}

FunctionTable Problem::loss_gradient(std::size_t i, const FunctionTable& phi) const {
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data_->losses.size()));
  coef[static_cast<Eigen::Index>(i)] = 1.0;
  return weighted_gradient(coef, phi);
}

Eigen::VectorXd Problem::lift(const Eigen::VectorXd& r) const {
  if (geometry() == OutputGeometry::kReals) return r;
  Eigen::VectorXd full(data_->K);
  full.head(data_->q) = r;
  full[data_->q] = -r.sum();
  return full;
}

Eigen::VectorXd Problem::reduce(const Eigen::VectorXd& full) const {
  if (geometry() == OutputGeometry::kReals) return full;
  return full.head(data_->q).array() - full[data_->q];
}

namespace {

// E^T A E for the simplex chart E = [I; -1^T].
Eigen::MatrixXd reduce_hessian(const Eigen::MatrixXd& A, int q) {
  const Eigen::MatrixXd top = A.topLeftCorner(q, q);
  const Eigen::VectorXd col = A.topRightCorner(q, 1);
  const Eigen::RowVectorXd row = A.bottomLeftCorner(1, q);
  const double corner = A(q, q);
  Eigen::MatrixXd out = top;
  out.colwise() -= col;
  out.rowwise() -= row;
  out.array() += corner;
  return out;
}

}  // namespace

double Problem::block_derivatives(std::size_t b, const Eigen::VectorXd& coef, const FunctionTable& phi,
                                  Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
  const auto& pts = data_->blocks.at(b);
  const int K = data_->K;
  const int q = data_->q;
  const bool simplex = geometry() == OutputGeometry::kSimplex;
  const auto nv = static_cast<Eigen::Index>(pts.size()) * q;
  if (grad) *grad = Eigen::VectorXd::Zero(nv);
  if (hess) *hess = Eigen::MatrixXd::Zero(nv, nv);
  double v = 0.0;
  Eigen::VectorXd g(K);
  Eigen::MatrixXd h(K, K);
  for (std::size_t l = 0; l < pts.size(); ++l) {
    g.setZero();
    h.setZero();
    const auto J = static_cast<Eigen::Index>(pts[l]);
    const double u = point_unary(pts[l], coef, phi.row(J).transpose(), grad ? &g : nullptr, hess ? &h : nullptr);
    if (!std::isfinite(u)) return kInf;
    v += u;
    const auto off = static_cast<Eigen::Index>(l) * q;
    if (grad) grad->segment(off, q) += reduce(g);
    if (hess) hess->block(off, off, q, q) += simplex ? reduce_hessian(h, q) : h;
  }
  Eigen::MatrixXd hp(2 * K, 2 * K);
  Eigen::VectorXd gp(2 * K);
  for (std::size_t pidx : data_->block_pairs[b]) {
    const PairTerm& p = data_->pairs[pidx];
    const double ci = coef[static_cast<Eigen::Index>(p.loss)];
    if (ci == 0.0) continue;
    const auto S = static_cast<Eigen::Index>(p.src);
    const auto I = static_cast<Eigen::Index>(p.img);
    gp.setZero();
    hp.setZero();
    const double w = ci * p.omega;
    for (int k = 0; k < K; ++k) {
      const double a = phi(S, k);
      const double c = phi(I, k);
      if (a < 0.0 || c <= 0.0 || (a == 0.0 && (grad || hess))) return kInf;
      if (a == 0.0) continue;
      const double lr = std::log(a / c);
      v += w * a * lr;
      gp[k] = w * (lr + 1.0);
      gp[K + k] = -w * a / c;
      hp(k, k) = w / a;
      hp(k, K + k) = hp(K + k, k) = -w / c;
      hp(K + k, K + k) = w * a / (c * c);
    }
    const auto os = static_cast<Eigen::Index>(data_->local_index[p.src]) * q;
    const auto oi = static_cast<Eigen::Index>(data_->local_index[p.img]) * q;
    if (grad) {
      grad->segment(os, q) += reduce(gp.head(K));
      grad->segment(oi, q) += reduce(gp.tail(K));
    }
    if (hess) {
      if (simplex) {
        hess->block(os, os, q, q) += reduce_hessian(hp.topLeftCorner(K, K), q);
        hess->block(os, oi, q, q) += reduce_hessian(hp.topRightCorner(K, K), q);
        hess->block(oi, os, q, q) += reduce_hessian(hp.bottomLeftCorner(K, K), q);
        hess->block(oi, oi, q, q) += reduce_hessian(hp.bottomRightCorner(K, K), q);
      } else {
        hess->block(os, os, q, q) += hp.topLeftCorner(K, K);
        hess->block(os, oi, q, q) += hp.topRightCorner(K, K);
        hess->block(oi, os, q, q) += hp.bottomLeftCorner(K, K);
        hess->block(oi, oi, q, q) += hp.bottomRightCorner(K, K);
      }
    }
  }
  return v;
}

Eigen::MatrixXd Problem::block_metric(std::size_t b) const {
  const auto& pts = data_->blocks.at(b);
  const int q = data_->q;
  const auto nv = static_cast<Eigen::Index>(pts.size()) * q;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nv, nv);
  for (std::size_t l = 0; l < pts.size(); ++l) {
    const double pij = dataset().measure()[static_cast<Eigen::Index>(pts[l])];
    const auto off = static_cast<Eigen::Index>(l) * q;
    G.block(off, off, q, q).diagonal().setConstant(pij);
    if (geometry() == OutputGeometry::kSimplex) G.block(off, off, q, q).array() += pij;
  }
  return G;
}

double Problem::dual_norm(const FunctionTable& grad) const {
  const Eigen::VectorXd& pi = dataset().measure();
  double s = 0.0;
  for (std::size_t j : data_->active) {
    const auto J = static_cast<Eigen::Index>(j);
    Eigen::RowVectorXd row = grad.row(J);
    if (geometry() == OutputGeometry::kSimplex) row.array() -= row.mean();
    s += row.squaredNorm() / pi[J];
  }
  return std::sqrt(s);
}

Eigen::MatrixXd Problem::constraint_gram(const FunctionTable& phi) const {
  const std::size_t m = num_constraints();
  const Eigen::VectorXd& pi = dataset().measure();
  std::vector<FunctionTable> grads;
  for (std::size_t i = 1; i <= m; ++i) {
    FunctionTable g = loss_gradient(i, phi);
    if (geometry() == OutputGeometry::kSimplex) g.colwise() -= g.rowwise().mean();
    grads.push_back(std::move(g));
  }
  Eigen::VectorXd inv_pi = Eigen::VectorXd::Zero(pi.size());
  for (std::size_t j : data_->active) inv_pi[static_cast<Eigen::Index>(j)] = 1.0 / pi[static_cast<Eigen::Index>(j)];
  Eigen::MatrixXd gram(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      const double v = (grads[a].array() * grads[b].array()).rowwise().sum().matrix().dot(inv_pi);
      gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
      gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
    }
  }
  return gram;
}

double Problem::l2_distance(const FunctionTable& a, const FunctionTable& b) const {
  return empirical_l2_distance(a, b, dataset());
}

double Problem::sample_loss(const LossData& L, std::size_t s, const FunctionTable& phi) const {
  const Sample& smp = dataset().sample(s);
  if (smp.weight == 0.0 || !in_group(smp, L.group)) return 0.0;
  const double w = smp.weight / L.group_mass;
  const std::size_t j = dataset().point_of(s);
  const Eigen::VectorXd x = phi.row(static_cast<Eigen::Index>(j)).transpose();
  switch (L.kind) {
    case LossKind::kSquaredError: return w * (x - target_vector(smp.label, data_->K)).squaredNorm();
    case LossKind::kCrossEntropy: {
      const double p = x[static_cast<Eigen::Index>(smp.label)];
      if (!(p > 0.0)) throw NumericalError("cross-entropy of a zero probability", s);
      return -w * std::log(p);
    }
    case LossKind::kMeanOutput: return w * L.scale * x[L.component];
    case LossKind::kKlPair: {
      const CounterfactualImage img = dataset().point_image(j, *L.transform);
      if (img.fixed_point) return 0.0;
      const double v = kl_divergence(x, phi.row(static_cast<Eigen::Index>(img.index)).transpose());
      if (!std::isfinite(v)) throw NumericalError("non-finite KL divergence", s);
      return w * v;
    }
  }
  return 0.0;
}

Eigen::MatrixXd Problem::sample_contributions(const FunctionTable& phi) const {
  const std::size_t n = dataset().num_source_samples();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(data_->losses.size()));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < data_->losses.size(); ++i) {
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = sample_loss(data_->losses[i], s, phi);
    }
  }
  return out;
}

Eigen::VectorXd Problem::tikhonov_terms(const FunctionTable& phi) const {
  const double sq = (phi.rowwise().squaredNorm().array() * dataset().measure().array()).sum();
  Eigen::VectorXd out(static_cast<Eigen::Index>(data_->losses.size()));
  for (std::size_t i = 0; i < data_->losses.size(); ++i) out[static_cast<Eigen::Index>(i)] = data_->losses[i].tau * sq;
  return out;
}

Problem Problem::shifted(const Eigen::VectorXd& eps) const {
  if (eps.size() != levels_.size()) throw StructuralError("perturbation has wrong length");
  Problem out = *this;
  out.levels_ = levels_ - eps;
  return out;
}

double empirical_risk(const Problem& problem, const FunctionTable& outputs, std::optional<std::size_t> constraint_index) {
  if (!constraint_index) return problem.objective(outputs);
  const std::size_t i = *constraint_index;
  if (i < 1 || i > problem.num_constraints()) throw StructuralError("constraint index out of range");
  return problem.raw_loss(i, outputs) - problem.levels()[static_cast<Eigen::Index>(i - 1)];
}

double empirical_l2_distance(const FunctionTable& a, const FunctionTable& b, const Dataset& dataset) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw StructuralError("function tables differ in shape");
  if (a.rows() != static_cast<Eigen::Index>(dataset.support_size())) {
    throw StructuralError("function table does not match dataset support");
  }
  return std::sqrt(((a - b).rowwise().squaredNorm().array() * dataset.measure().array()).sum());
}

}  // namespace duallearn
