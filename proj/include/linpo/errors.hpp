#pragma once

#include <stdexcept>
#include <string>

namespace linpo {

/// Unrecoverable numerical failure (e.g. covariance lost positive
/// definiteness). Maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid model data (transition rows off the simplex beyond tolerance).
struct ModelError : std::runtime_error {
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad CLI arguments or config. Maps to CLI exit code 1.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace linpo
