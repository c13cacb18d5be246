#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace magex {

// Exit codes used by the CLI and tests.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitMissingArtifact = 4,
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when NaN/Inf reaches a place it must never be (losses, gradients,
// environment rewards). The trainer maps this to a distinct exit code.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

inline bool is_finite(double v) { return std::isfinite(v); }

}  // namespace magex
