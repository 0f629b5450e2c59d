#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>

namespace energyfc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or hyperparameters (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or window shapes disagree with the network configuration.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A backward pass was handed a tape recorded for different inputs.
class ConsistencyError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed or unusable input data (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// CSV parse failure pinned to a source and 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

/// Checkpoint document could not be decoded; `field()` is the offending path.
class LoadError : public DataError {
 public:
  LoadError(std::string field, const std::string& what)
      : DataError(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Filesystem failure; the message carries the path.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values in inputs, gradients or losses (CLI exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Maps an exception to the CLI exit code contract (0 is reserved for success).
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 2;
  return 1;
}

}  // namespace energyfc
