#pragma once

#include <stdexcept>
#include <string>

namespace tfgrasp {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or spatial sizes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric parameter (epsilon, optimizer state length, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Inconsistent model/run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry (zero-size rectangles, undefined angles).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Malformed text or binary input.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Dataset content that cannot be used (no valid pixels, missing labels).
class DataError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tfgrasp
