#pragma once

#include <stdexcept>
#include <string>

namespace botda {

/// Base of every error thrown by the toolkit. The category maps onto the
/// CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid parameters, inconsistent configuration, violated preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed, truncated or mismatched data (files, frames, traces).
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// NaN/Inf, divergence, non-convergence that cannot be recovered.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace botda
