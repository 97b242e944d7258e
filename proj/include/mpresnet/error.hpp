#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mpresnet {

// Base class of every error raised by the library. `kind()` is a stable,
// machine-parsable tag that the CLI prints in front of the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Incompatible tensor extents. `dimension` names the offending axis.
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, const std::string& message)
      : Error("shape_error", message), dimension_(std::move(dimension)) {}

  const std::string& dimension() const { return dimension_; }

 private:
  std::string dimension_;
};

// Invalid architecture / operator configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config_error", message) {}
};

// Bad label values. Carries the pixel position of the first offender.
class DataError : public Error {
 public:
  DataError(const std::string& message, int64_t row = -1, int64_t col = -1)
      : Error("data_error", message), row_(row), col_(col) {}

  int64_t row() const { return row_; }
  int64_t col() const { return col_; }

 private:
  int64_t row_;
  int64_t col_;
};

// Binary file decoding failures. Subclasses distinguish the failure modes.
class FormatError : public Error {
 public:
  FormatError(std::string kind, const std::string& message) : Error(std::move(kind), message) {}
};

class BadMagicError : public FormatError {
 public:
  BadMagicError(uint64_t offset, const std::string& message)
      : FormatError("bad_magic", message), offset_(offset) {}

  uint64_t offset() const { return offset_; }

 private:
  uint64_t offset_;
};

class TruncatedError : public FormatError {
 public:
  TruncatedError(uint64_t expected, uint64_t actual, const std::string& message)
      : FormatError("truncated", message), expected_(expected), actual_(actual) {}

  uint64_t expected_bytes() const { return expected_; }
  uint64_t actual_bytes() const { return actual_; }

 private:
  uint64_t expected_;
  uint64_t actual_;
};

class ExtentOverflowError : public FormatError {
 public:
  explicit ExtentOverflowError(const std::string& message)
      : FormatError("extent_overflow", message) {}
};

// API misuse, e.g. backward() on a non-scalar tensor.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage_error", message) {}
};

// Non-finite values during training or gradient checking.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric_error", message) {}
};

// Metrics requested from a confusion matrix that scored no pixels.
class EmptyMatrixError : public Error {
 public:
  EmptyMatrixError() : Error("empty_matrix", "no scored pixels") {}
};

}  // namespace mpresnet
