#pragma once

#include <stdexcept>
#include <string>

namespace countnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis disagreement between tensor operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad argument value (ranges, empty datasets, invalid permutations, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed text input (annotation files, config files).
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required (loss, gradients).
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { VersionMismatch, Truncated, ChecksumFailure, ConfigMismatch, BadMagic };

  CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace countnet
