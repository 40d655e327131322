#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace heis {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A solver or finite-difference evaluation produced a non-finite value or
/// failed to converge.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

/// A point was passed to a map outside its domain of validity.
class DomainError : public Error {
 public:
  using Error::Error;
};

class SamplingFailure : public Error {
 public:
  using Error::Error;
};

class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Raised when a Jacobian sample is nonpositive or non-finite.
class DegenerateMap : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::string expected)
      : Error("parse error at offset " + std::to_string(offset) + ": expected " + expected),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::string expected_;
};

class NameError : public Error {
 public:
  NameError(std::size_t offset, std::string name)
      : Error("unknown identifier '" + name + "' at offset " + std::to_string(offset)),
        offset_(offset),
        name_(std::move(name)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& name() const noexcept { return name_; }

 private:
  std::size_t offset_;
  std::string name_;
};

}  // namespace heis
