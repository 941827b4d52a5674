#pragma once

#include <stdexcept>
#include <string>

namespace essa {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed data or file format (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Violated API precondition (CLI exit code 4).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Tensor dimension mismatch; carries both offending shapes in the message.
class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& what) : ContractError(what) {}
};

}  // namespace essa
