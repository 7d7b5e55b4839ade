#pragma once

#include <stdexcept>
#include <string>

namespace rlalm {

/// Base of every error thrown by the library. `kind()` is a short stable tag
/// used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

class MajorizationError : public Error {
 public:
  explicit MajorizationError(const std::string& what) : Error("majorization", what) {}
};

/// Oscillation-based quantities requested in the overdamped regime.
class RegimeError : public Error {
 public:
  explicit RegimeError(const std::string& what) : Error("regime", what) {}
};

/// Iterative estimate that did not settle; carries the last estimate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : Error("convergence", what), last_estimate_(last_estimate) {}
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

}  // namespace rlalm
