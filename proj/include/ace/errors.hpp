#pragma once

#include <stdexcept>
#include <string>

namespace ace {

// Shape/dimension mismatches between tensors.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API precondition (bad label, bad rate, non-scalar loss, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mathematically invalid request (empty reduction group, ...).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file (wrong magic, truncation, ...).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during optimization (NaN gradients, ...).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ace
