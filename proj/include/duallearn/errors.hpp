#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace duallearn {

/// Malformed inputs: bad shapes, missing counterfactual pairs, invalid indices.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration that the solvers cannot accept (e.g. no strong convexity).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value was produced while evaluating a loss or a model.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t sample_index)
      : std::runtime_error(what + " (sample " + std::to_string(sample_index) + ")"),
        sample_index_(sample_index) {}
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what), sample_index_(static_cast<std::size_t>(-1)) {}

  std::size_t sample_index() const { return sample_index_; }

 private:
  std::size_t sample_index_;
};

/// The primal oracle blew up. Carries a suggested smaller step size.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double suggested_step)
      : std::runtime_error(what + " (try step size <= " + std::to_string(suggested_step) + ")"),
        suggested_step_(suggested_step) {}

  double suggested_step() const { return suggested_step_; }

 private:
  double suggested_step_;
};

/// The constraint set has no strictly feasible point. `certificate` is a
/// nonnegative multiplier whose Lagrangian minimum is positive.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, Eigen::VectorXd certificate)
      : std::runtime_error(what), certificate_(std::move(certificate)) {}

  const Eigen::VectorXd& certificate() const { return certificate_; }

 private:
  Eigen::VectorXd certificate_;
};

/// Checkpoint or artifact files are missing or unreadable.
class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace duallearn
