#pragma once

#include <stdexcept>
#include <string>

namespace fedmobi {

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError -> 2, NumericError -> 3, ProtocolError/PhaseError -> 4,
// anything else -> 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct PlanError : std::runtime_error {
  explicit PlanError(const std::string& m) : std::runtime_error(m) {}
};

// Unknown backbone id at a projection boundary.
struct IdentityError : std::runtime_error {
  explicit IdentityError(const std::string& m) : std::runtime_error(m) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& m) : std::runtime_error(m) {}
};

struct PhaseError : std::runtime_error {
  explicit PhaseError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace fedmobi
