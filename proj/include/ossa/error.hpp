#pragma once

#include <stdexcept>
#include <string>

namespace ossa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values, out-of-range scalars, or otherwise unusable arguments.
class InvalidInput : public Error {
  public:
    using Error::Error;
};

class ShapeMismatch : public Error {
  public:
    using Error::Error;
};

/// Config, schema, or invariant violation detected while validating data that
/// came from outside the process (files, CLI flags).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Prototype and backbone do not belong together.
class FingerprintMismatch : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace ossa
