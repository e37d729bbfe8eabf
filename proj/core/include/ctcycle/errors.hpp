#pragma once

#include <stdexcept>
#include <string>

namespace ctcycle {

/// Malformed or truncated on-disk data (bad magic, bad version, short read).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid arguments or state: shape mismatches, bad configs, missing files.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/dimension mismatch between tensors or between a tensor and an op.
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& msg) : ValidationError(msg) {}
};

/// Non-finite values where finite ones are required (NaN/Inf is never silent).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ctcycle
