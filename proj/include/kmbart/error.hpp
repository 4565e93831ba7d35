#pragma once

#include <stdexcept>
#include <string>

namespace kmbart {

// Base of every error raised by the library. Callers that only need a
// message catch this; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented precondition (probabilities, rates, counts).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Index or token id outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Assembled sequence exceeds max_positions.
class LengthError : public Error {
 public:
  using Error::Error;
};

// A reduction had nothing to reduce over.
class EmptyLossError : public Error {
 public:
  EmptyLossError() : Error("empty loss") {}
  explicit EmptyLossError(const std::string& what) : Error("empty loss: " + what) {}
};

// Malformed input file; the message carries the line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnknownRelationError : public Error {
 public:
  explicit UnknownRelationError(const std::string& relation)
      : Error("unknown COMET relation '" + relation + "'"), relation_(relation) {}
  const std::string& relation() const noexcept { return relation_; }

 private:
  std::string relation_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, shape_disagreement, missing_parameter, config_mismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace kmbart
