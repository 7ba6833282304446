#pragma once

#include <stdexcept>
#include <string>

namespace frequnet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or divisibility violation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong state (e.g. backward with nothing recorded).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (labels out of range and similar).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written, or has a bad layout.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace frequnet
