#pragma once

#include <stdexcept>
#include <string>

namespace fbsde {

// Bad user input: malformed config, unknown keys, checkpoint mismatch.
// The CLI maps this family to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures (exit code 2).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// A simulated path produced a non-finite value. `step` is the time index at
// which propagation failed, -1 if unknown.
struct PathFailureError : NumericalError {
  explicit PathFailureError(const std::string& msg, int step_index = -1)
      : NumericalError(step_index >= 0 ? msg + " (step " + std::to_string(step_index) + ")" : msg),
        step(step_index) {}
  int step;
};

// Rhat = R + sigma^2 G'Vxx G stayed non positive-definite after jitter.
struct SingularControlError : NumericalError {
  using NumericalError::NumericalError;
};

// Analytic oracle could not produce a solution (e.g. Rhat not PD).
struct OracleError : NumericalError {
  using NumericalError::NumericalError;
};

// Training loop aborted (too many failed paths, non-finite gradients, ...).
struct TrainingError : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace fbsde
