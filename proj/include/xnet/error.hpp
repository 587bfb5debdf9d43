#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xnet {

// Root of every library error. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SplitError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; carries the byte offset where parsing failed.
class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Non-finite values reached the optimizer.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string layer)
      : Error(what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

}  // namespace xnet
