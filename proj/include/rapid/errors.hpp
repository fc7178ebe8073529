#pragma once

#include <stdexcept>
#include <string>

namespace rapid {

// Base of every error raised by the library. Subclasses name the failed
// contract so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class ArityError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or parameter during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Importance weight could not be formed: behavior probability is zero or the
// log-ratio left the representable band.
class DegenerateSampleError : public NumericError {
 public:
  using NumericError::NumericError;
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

}  // namespace rapid
