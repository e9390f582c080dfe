#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtgnn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes, ranks, or axis arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A sequence is too short for the requested receptive field or window.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A required external input (file, matrix) was not supplied.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtgnn
