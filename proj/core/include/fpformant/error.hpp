#pragma once

#include <stdexcept>
#include <string>

namespace fpf {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes are incompatible for the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

/// A configuration value is out of its valid range.
struct ConfigError : Error {
  using Error::Error;
};

/// Input data violates a precondition (empty sequence, bad id, negative pitch).
struct InputError : Error {
  using Error::Error;
};

/// An API contract was violated (non-scalar loss, mismatched lengths).
struct ContractError : Error {
  using Error::Error;
};

/// A configured capacity limit was exceeded.
struct CapacityError : Error {
  using Error::Error;
};

/// A computation produced or encountered a non-finite value.
struct NumericError : Error {
  using Error::Error;
};

/// A file could not be read or written, or its contents are malformed.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fpf
