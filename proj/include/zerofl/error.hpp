#pragma once

#include <stdexcept>
#include <string>

namespace zerofl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree. `dimension` names the offending axis or operand.
class ShapeError : public Error {
 public:
  ShapeError(std::string dimension, const std::string& message)
      : Error(message), dimension_(std::move(dimension)) {}

  const std::string& dimension() const noexcept { return dimension_; }

 private:
  std::string dimension_;
};

/// A precondition on an argument value was violated.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input (ZFU payloads, IDX files).
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, Truncated, Invariant };

  FormatError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Configuration problem. `key` is the dotted key path, e.g. "federation.sp".
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace zerofl
