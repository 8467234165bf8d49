#pragma once

#include <stdexcept>
#include <string>

namespace ham {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of its permitted range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An input that makes a quantity undefined (e.g. a zero-norm vector).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked on an object in the wrong state.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data (empty dataset, unknown class id).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A serialized file is corrupt or truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ham
