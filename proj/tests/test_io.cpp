#include <filesystem>

#include "doctest.h"
#include "duallearn/errors.hpp"
#include "duallearn/io.hpp"
#include "support.hpp"

using namespace duallearn;
using namespace duallearn::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "duallearn_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

DualTrace short_trace() {
  const Problem p = regression_problem(4);
  AscentConfig cfg;
  cfg.iterations = 12;
  cfg.t0 = 6;
  cfg.oracle.max_steps = 5;
  cfg.checkpoint_stride = 3;
  return run_dual_ascent(p, make_model(Arch::kLinear, 0, p, 1), cfg);
}

}  // namespace

TEST_CASE("doubles print in round-trip form") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}

TEST_CASE("trace CSV round trip keeps every column") {
  const DualTrace tr = short_trace();
  const std::string path = scratch("trace.csv").string();
  write_trace_csv(path, tr);
  const DualTrace back = read_trace_csv(path);
  REQUIRE(back.length() == tr.length());
  for (int t = 1; t <= tr.length(); ++t) {
    CHECK(back.at(t).t == t);
    CHECK((back.at(t).lambda - tr.at(t).lambda).norm() == 0.0);
    CHECK((back.at(t).slacks - tr.at(t).slacks).norm() == 0.0);
    CHECK((back.at(t).slack_hat - tr.at(t).slack_hat).norm() == 0.0);
    CHECK(back.at(t).objective == tr.at(t).objective);
    CHECK(back.at(t).lagrangian == tr.at(t).lagrangian);
  }
  CHECK(trace_csv(back) == trace_csv(tr));
  const std::string header = trace_csv(tr).substr(0, trace_csv(tr).find('\n'));
  CHECK(header == "t,lambda_1,lambda_2,slack_1,slack_2,slack_hat_1,slack_hat_2,objective,lagrangian,gap_surrogate");
}

TEST_CASE("checkpoint files round trip and reject corruption") {
  const DualTrace tr = short_trace();
  const std::string path = scratch("checkpoints.bin").string();
  write_checkpoints(path, tr.checkpoints);
  const auto back = read_checkpoints(path);
  REQUIRE(back.size() == tr.checkpoints.size());
  for (const auto& [t, m] : tr.checkpoints) {
    CHECK((back.at(t).theta - m.theta).norm() == 0.0);
    CHECK(back.at(t).arch == m.arch);
  }
  write_text_file(path, "XXXX garbage");
  CHECK_THROWS(read_checkpoints(path));
}

TEST_CASE("models round trip through JSON") {
  const Problem p = fairness_problem(1, 20, 1);
  const ParamModel m = make_model(Arch::kMlp2, 5, p, 3, random_projection(4, static_cast<int>(p.dataset().input_dim()), 2));
  const ParamModel back = model_from_json(model_to_json(m));
  CHECK(back.hidden == 5);
  CHECK(back.softmax);
  CHECK((back.projection - m.projection).norm() == 0.0);
  CHECK((back.theta - m.theta).norm() == 0.0);
}

TEST_CASE("manifest lists sizes and SHA-256 hashes") {
  const fs::path dir = scratch("manifest");
  fs::create_directories(dir);
  write_text_file((dir / "a.txt").string(), "abc");
  write_manifest(dir.string(), {"a.txt"});
  const Json j = read_json_file((dir / "manifest.json").string());
  const std::string dump = j.dump();
  CHECK(sha256_file((dir / "a.txt").string()) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(dump.find("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad") != std::string::npos);
  CHECK_THROWS(sha256_file((dir / "missing").string()));
}
