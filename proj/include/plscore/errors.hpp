#pragma once

#include <stdexcept>
#include <string>

namespace plscore {

// Base class for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape disagreement (e.g. inner extents of a matmul).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition (bad index, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Mathematically invalid request (empty axis, N = 0 normalization, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data; carries the offending line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Training failure (divergence, non-finite gradient, ...).
class TrainError : public Error {
 public:
  using Error::Error;
};

// Model lacks a capability the caller asked for (wrong kind, missing head).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Input exceeds a model's sequence-length limit.
class LengthError : public Error {
 public:
  using Error::Error;
};

}  // namespace plscore
