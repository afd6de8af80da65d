#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace caselab {

/// Raised when tensor extents do not match what an operation expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces or receives NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the binary readers. `offset()` is the byte position where
/// decoding failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Raised by statistical tests whose input carries no information
/// (all-zero differences, zero variance).
class DegenerateSampleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace caselab
