#pragma once

#include <stdexcept>
#include <string>

namespace skupatch {

/// Base for every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or token-set shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An API called in a way its contract forbids (non-scalar loss, empty list).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unknown configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed files or input data (bad raster, NaN cost, corrupted checkpoint).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace skupatch
