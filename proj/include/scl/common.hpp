#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scl {

#if defined(SCL_FLOAT32)
using real = float;
#else
using real = double;
#endif

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (batch invariants, architecture mismatch).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required, or a diverged computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data; carries the byte offset of the defect.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t offset)
      : Error(msg + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_ = 0;
};

}  // namespace scl
