#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace qvi {

/// Raised when inputs violate a documented precondition (dimensions, cost signs, parameter domains).
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Base class for numerical solver failures. Carries the last iterate (flattened,
/// regime-major) and its residual sup-norm for diagnostics.
class SolverError : public std::runtime_error {
public:
  SolverError(const std::string& what, double last_residual, Eigen::VectorXd last_iterate = {})
      : std::runtime_error(what), last_residual_(last_residual),
        last_iterate_(std::move(last_iterate)) {}

  double last_residual() const noexcept { return last_residual_; }
  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }

private:
  double last_residual_;
  Eigen::VectorXd last_iterate_;
};

class SingularSlant : public SolverError {
public:
  using SolverError::SolverError;
};

class MaxIterExceeded : public SolverError {
public:
  using SolverError::SolverError;
};

class UnsupportedPenaltyDegree : public InvalidInput {
public:
  using InvalidInput::InvalidInput;
};

// oracle failures
class MaxStepsExceeded : public SolverError {
public:
  using SolverError::SolverError;
};

class DivergenceDetected : public SolverError {
public:
  using SolverError::SolverError;
};

class NoConsistentPattern : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class MultiplePatterns : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace qvi
