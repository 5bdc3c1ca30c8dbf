#pragma once

#include <stdexcept>
#include <string>

namespace kinform {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to what a kernel expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient tape (double backward, loss not on the tape, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// The function under a gradient check is not deterministic.
class CheckInvalidError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset content.
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// A path could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid or two values conflict.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace kinform
