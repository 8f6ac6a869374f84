#pragma once

#include <stdexcept>
#include <string>

namespace simcl {

// Error taxonomy. Every failure mode maps onto exactly one of these so
// callers can distinguish bad shapes from bad configs from bad files.

// Tensor extents do not conform to an operation's shape rule.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A computation produced (or was handed) a non-finite value.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-facing configuration (hyperparameters, presets, config files).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// An API precondition was violated (non-scalar loss, missing labels, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// An object was used in a state that forbids the operation (double backward).
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file on disk does not match its expected layout.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A well-formed file is incompatible with the requesting object.
struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required input file is missing or unreadable.
struct IngestionError : std::runtime_error {
  explicit IngestionError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace simcl
