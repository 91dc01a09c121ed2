#include "duallearn/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw StorageError("write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw StorageError("malformed JSON in '" + path + "': " + e.what());
  }
}

std::string trace_csv(const DualTrace& trace) {
  const Eigen::Index m = trace.records.empty() ? 0 : trace.records.front().lambda.size();
  std::string out = "t";
  for (const char* prefix : {"lambda_", "slack_", "slack_hat_"}) {
    for (Eigen::Index i = 1; i <= m; ++i) out += "," + std::string(prefix) + std::to_string(i);
  }
  out += ",objective,lagrangian,gap_surrogate\n";
  for (const TraceRecord& r : trace.records) {
    out += std::to_string(r.t);
    for (const Eigen::VectorXd* v : {&r.lambda, &r.slacks, &r.slack_hat}) {
      for (Eigen::Index i = 0; i < m; ++i) out += "," + format_double((*v)[i]);
    }
    out += "," + format_double(r.objective) + "," + format_double(r.lagrangian) + "," + format_double(r.gap_surrogate) + "\n";
  }
  return out;
}

void write_trace_csv(const std::string& path, const DualTrace& trace) { write_text_file(path, trace_csv(trace)); }

DualTrace read_trace_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw StorageError("empty trace file '" + path + "'");
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 4 || (cols - 4) % 3 != 0) throw StorageError("unexpected trace header in '" + path + "'");
  const auto m = static_cast<Eigen::Index>((cols - 4) / 3);
  DualTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
    if (vals.size() != cols) throw StorageError("ragged row in '" + path + "'");
    TraceRecord r;
    r.t = static_cast<int>(vals[0]);
    r.lambda = Eigen::Map<Eigen::VectorXd>(vals.data() + 1, m);
    r.slacks = Eigen::Map<Eigen::VectorXd>(vals.data() + 1 + m, m);
    r.slack_hat = Eigen::Map<Eigen::VectorXd>(vals.data() + 1 + 2 * m, m);
    r.objective = vals[cols - 3];
    r.lagrangian = vals[cols - 2];
    r.gap_surrogate = vals[cols - 1];
    trace.records.push_back(std::move(r));
  }
  return trace;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i])) {
      a.push_back(v[i]);
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].is_null() ? std::nan("") : j[i].get<double>();
  }
  return v;
}

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_from(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (j.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = vector_from_json(j[r]).transpose();
  return m;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw StorageError("truncated checkpoint file");
  return v;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

Json model_to_json(const ParamModel& model) {
  return Json{{"arch", to_string(model.arch)},
              {"hidden", model.hidden},
              {"input_dim", model.input_dim},
              {"output_dim", model.output_dim},
              {"softmax", model.softmax},
              {"projection", matrix_to_json(model.projection)},
              {"theta", vector_to_json(model.theta)}};
}

ParamModel model_from_json(const Json& j) {
  ParamModel m;
  m.arch = parse_arch(j.at("arch").get<std::string>());
  m.hidden = j.at("hidden").get<int>();
  m.input_dim = j.at("input_dim").get<int>();
  m.output_dim = j.at("output_dim").get<int>();
  m.softmax = j.at("softmax").get<bool>();
  m.projection = matrix_from_json(j.at("projection"));
  m.theta = vector_from_json(j.at("theta"));
  if (m.theta.size() != m.num_params()) throw StorageError("model theta has the wrong length");
  return m;
}

void write_checkpoints(const std::string& path, const std::map<int, ParamModel>& checkpoints) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot open '" + path + "' for writing");
  out.write("DLCK", 4);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(checkpoints.size()));
  for (const auto& [t, m] : checkpoints) {
    put(out, static_cast<std::int32_t>(t));
    put(out, static_cast<std::int32_t>(m.arch));
    put(out, static_cast<std::int32_t>(m.hidden));
    put(out, static_cast<std::int32_t>(m.input_dim));
    put(out, static_cast<std::int32_t>(m.output_dim));
    put(out, static_cast<std::uint8_t>(m.softmax));
    put(out, static_cast<std::int32_t>(m.projection.rows()));
    put(out, static_cast<std::int32_t>(m.projection.cols()));
    out.write(reinterpret_cast<const char*>(m.projection.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.projection.size())));
    put(out, static_cast<std::int64_t>(m.theta.size()));
    out.write(reinterpret_cast<const char*>(m.theta.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.theta.size())));
  }
  if (!out) throw StorageError("write to '" + path + "' failed");
}

std::map<int, ParamModel> read_checkpoints(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DLCK", 4) != 0) throw StorageError("'" + path + "' is not a checkpoint file");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw StorageError("unsupported checkpoint version");
  const auto count = get<std::uint32_t>(in);
  std::map<int, ParamModel> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const int t = get<std::int32_t>(in);
    ParamModel m;
    const int arch = get<std::int32_t>(in);
    if (arch != static_cast<int>(Arch::kLinear) && arch != static_cast<int>(Arch::kMlp2)) {
      throw StorageError("unknown architecture code in checkpoint");
    }
    m.arch = static_cast<Arch>(arch);
    m.hidden = get<std::int32_t>(in);
    m.input_dim = get<std::int32_t>(in);
    m.output_dim = get<std::int32_t>(in);
    m.softmax = get<std::uint8_t>(in) != 0;
    const int rows = get<std::int32_t>(in);
    const int cols = get<std::int32_t>(in);
    m.projection.resize(rows, cols);
    in.read(reinterpret_cast<char*>(m.projection.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.projection.size())));
    const auto n = get<std::int64_t>(in);
    if (n < 0) throw StorageError("negative theta length in checkpoint");
    m.theta.resize(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(m.theta.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n)));
    if (!in) throw StorageError("truncated checkpoint file");
    if (m.theta.size() != m.num_params()) throw StorageError("checkpoint theta has the wrong length");
    out.emplace(t, std::move(m));
  }
  return out;
}

Json to_json(const UnparamSolution& s) {
  Json j{{"lambda_star", vector_to_json(s.lambda_star)},
         {"dual_value", number_or_null(s.dual_value)},
         {"primal_value", number_or_null(s.primal_value)},
         {"slacks", vector_to_json(s.slacks)},
         {"kkt_residuals", vector_to_json(s.kkt_residuals)},
         {"duality_residual", number_or_null(s.duality_residual)},
         {"dual_residual", number_or_null(s.dual_residual)},
         {"iterations", s.iterations},
         {"converged", s.converged},
         {"capped", s.capped},
         {"diagnostics", s.diagnostics},
         {"phi_star", matrix_to_json(s.phi_star)}};
  j["slater_witness_slacks"] = s.slater_witness_slacks ? vector_to_json(*s.slater_witness_slacks) : Json(nullptr);
  return j;
}

Json to_json(const ConstantEstimates& c) {
  return Json{{"m", c.m},
              {"M", number_or_null(c.M)},
              {"beta", number_or_null(c.beta)},
              {"mu0", number_or_null(c.mu0)},
              {"sigma", number_or_null(c.sigma)},
              {"nu", number_or_null(c.nu)},
              {"Delta", number_or_null(c.Delta)},
              {"mu_g", number_or_null(c.mu_g)},
              {"beta_g", number_or_null(c.beta_g)},
              {"kappa0", number_or_null(c.kappa0)},
              {"kappa1", number_or_null(c.kappa1)},
              {"lambda_u_norm", number_or_null(c.lambda_u_norm)},
              {"lambda_p_norm", number_or_null(c.lambda_p_norm)},
              {"lambda_tilde_norm", number_or_null(c.lambda_tilde_norm)},
              {"licq", c.licq},
              {"provenance", c.provenance}};
}

ConstantEstimates constants_from_json(const Json& j) {
  ConstantEstimates c;
  c.m = j.at("m").get<int>();
  c.M = number_from(j.at("M"));
  c.beta = number_from(j.at("beta"));
  c.mu0 = number_from(j.at("mu0"));
  c.sigma = number_from(j.at("sigma"));
  c.nu = number_from(j.at("nu"));
  c.Delta = number_from(j.at("Delta"));
  c.mu_g = number_from(j.at("mu_g"));
  c.beta_g = number_from(j.at("beta_g"));
  c.kappa0 = number_from(j.at("kappa0"));
  c.kappa1 = number_from(j.at("kappa1"));
  c.lambda_u_norm = number_from(j.at("lambda_u_norm"));
  c.lambda_p_norm = number_from(j.at("lambda_p_norm"));
  c.lambda_tilde_norm = number_from(j.at("lambda_tilde_norm"));
  c.licq = j.at("licq").get<bool>();
  c.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
  return c;
}

Json to_json(const CertificateReport& r) {
  const Observations& o = r.observations;
  Json obs{{"lambda_p", vector_to_json(o.lambda_p)},
           {"slacks_phi_star", vector_to_json(o.slacks_phi_star)},
           {"slacks_f_p", vector_to_json(o.slacks_f_p)},
           {"slacks_phi_p", vector_to_json(o.slacks_phi_p)},
           {"feasibility_gap", vector_to_json(o.slacks_f_p - o.slacks_phi_star)},
           {"objective_f_p", number_or_null(o.objective_f_p)},
           {"constraint_deviation_inf", number_or_null(o.constraint_deviation_inf)},
           {"constraint_deviation_l2sq", number_or_null(o.constraint_deviation_l2sq)},
           {"lagrangian_minimizer_deviation_l2sq", number_or_null(o.dual_perturbation_l2sq)},
           {"parametrization_deviation_l2sq", number_or_null(o.parametrization_l2sq)},
           {"dual_distance_sq", number_or_null(o.dual_distance_sq)},
           {"primal_p", o.primal_p ? number_or_null(*o.primal_p) : Json(nullptr)},
           {"dual_p", o.dual_p ? number_or_null(*o.dual_p) : Json(nullptr)},
           {"exact_reference", o.exact_reference},
           {"rho", number_or_null(o.rho)},
           {"rho_source", o.rho_source},
           {"s2", number_or_null(o.s2)},
           {"best_value", number_or_null(o.best_value)}};
  Json verdicts = Json::array();
  for (const Verdict& v : r.verdicts) {
    verdicts.push_back(Json{{"name", v.name},
                            {"status", to_string(v.status)},
                            {"observed", number_or_null(v.observed)},
                            {"bound", number_or_null(v.bound)},
                            {"margin", number_or_null(v.margin)},
                            {"range", number_or_null(v.range)},
                            {"note", v.note}});
  }
  Json audit = Json::object();
  for (const auto& [k, v] : r.assumptions_audit) audit[k] = number_or_null(v);
  return Json{{"schema_version", 1},
              {"constants", to_json(r.constants)},
              {"gamma1", number_or_null(r.gamma1)},
              {"gamma2", number_or_null(r.gamma2)},
              {"observations", obs},
              {"verdicts", verdicts},
              {"assumptions_audit", audit},
              {"notes", r.notes},
              {"any_violated", r.any_violated()}};
}

Json to_json(const DualTrace& trace) {
  std::vector<int> times;
  for (const auto& kv : trace.checkpoints) times.push_back(kv.first);
  return Json{{"iterations", trace.length()},
              {"t0", trace.t0},
              {"eta", trace.eta},
              {"tilt", trace.tilt},
              {"best_index", trace.best_index},
              {"s2_estimate", number_or_null(trace.s2_estimate)},
              {"final_lambda", vector_to_json(trace.final_lambda)},
              {"aborted", trace.aborted},
              {"diagnostic", trace.diagnostic},
              {"checkpoint_times", times}};
}

std::string sha256_file(const std::string& path) {
  const std::string data = read_text_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw StorageError("sha256 failed for '" + path + "'");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& files) {
  Json list = Json::array();
  for (const std::string& f : files) {
    const std::string full = (fs::path(dir) / f).string();
    list.push_back(Json{{"path", f}, {"bytes", fs::file_size(full)}, {"sha256", sha256_file(full)}});
  }
  write_json_file((fs::path(dir) / "manifest.json").string(), Json{{"schema_version", 1}, {"files", list}});
}

}  // namespace duallearn
