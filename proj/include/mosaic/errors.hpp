#pragma once

#include <stdexcept>
#include <string>

namespace mosaic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A query point or parameter lies outside the function's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input data is unusable (non-finite values, wrong lengths).
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its content does not match the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A genome arrangement violates its coverage invariant.
class ArrangementError : public Error {
 public:
  using Error::Error;
};

}  // namespace mosaic
