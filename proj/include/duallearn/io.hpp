#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "duallearn/certificates.hpp"
#include "duallearn/dual_engine.hpp"
#include "duallearn/models.hpp"
#include "duallearn/unparam.hpp"

namespace duallearn {

using Json = nlohmann::json;

/// Round-trip decimal form ("%.17g"); non-finite values print as nan/inf.
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);

/// Columns: t, lambda_1..m, slack_1..m, slack_hat_1..m, objective,
/// lagrangian, gap_surrogate.
std::string trace_csv(const DualTrace& trace);
void write_trace_csv(const std::string& path, const DualTrace& trace);
/// Records only; run metadata lives in the run JSON.
DualTrace read_trace_csv(const std::string& path);

Json model_to_json(const ParamModel& model);
ParamModel model_from_json(const Json& j);

/// Binary checkpoint file: "DLCK", format version, entry count, then per
/// entry the iteration, architecture header, projection and theta (doubles
/// in host byte order).
void write_checkpoints(const std::string& path, const std::map<int, ParamModel>& checkpoints);
std::map<int, ParamModel> read_checkpoints(const std::string& path);

Json to_json(const UnparamSolution& s);
Json to_json(const ConstantEstimates& c);
ConstantEstimates constants_from_json(const Json& j);
Json to_json(const CertificateReport& r);
Json to_json(const DualTrace& trace);  // metadata only

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

/// manifest.json listing `files` (relative to `dir`) with sizes and hashes.
void write_manifest(const std::string& dir, const std::vector<std::string>& files);

Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

}  // namespace duallearn
