#pragma once

#include <stdexcept>
#include <string>

namespace nbhd {

// Base of every error the library raises. `user_error()` separates bad input
// (exit code 1) from internal failures (exit code 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual bool user_error() const { return false; }
};

class UserError : public Error {
 public:
  using Error::Error;
  bool user_error() const override { return true; }
};

class InputError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class ParseError : public UserError {
 public:
  using UserError::UserError;
};

class SchemaError : public UserError {
 public:
  using UserError::UserError;
};

class EmptyInputError : public UserError {
 public:
  using UserError::UserError;
};

// Raised when an upstream stage output is absent; the message names the stage.
class MissingArtifactError : public UserError {
 public:
  using UserError::UserError;
};

class CrsMismatchError : public UserError {
 public:
  using UserError::UserError;
};

// Transient transport failure; callers may retry.
class NetworkError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// NaN/inf encountered during optimisation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant (a bug, not bad input).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace nbhd
