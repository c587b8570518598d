#pragma once

#include <stdexcept>
#include <string>

namespace mustr {

// Error taxonomy maps onto CLI exit codes: DataError -> 3, DegeneracyError -> 4,
// anything else that escapes -> 1. Usage errors are handled by the CLI parser (2).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / dimension contract violations (e.g. matmul inner-dim mismatch).
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Generic precondition violations (bad arguments, duplicate ids, empty input).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Attention or decoder invoked with an empty context.
struct EmptyMemoryError : ContractError {
  explicit EmptyMemoryError(const std::string& msg) : ContractError(msg) {}
};

// Numerically degenerate input (collinear points, no confident pixels, ...).
struct DegeneracyError : Error {
  explicit DegeneracyError(const std::string& msg) : Error(msg) {}
};

// Malformed files, failed association, non-finite training loss.
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

}  // namespace mustr
