// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hialign {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (tau <= 0, p >= 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite value detected while NaN checking is enabled, or a diverged loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem and format failures. The CLI maps these to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

class LoadError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace hialign
