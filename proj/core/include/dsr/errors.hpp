#pragma once

#include <stdexcept>
#include <string>

namespace dsr {

// Root of every error thrown by the library. Callers that only need to
// report failures catch this; tests distinguish the concrete kinds.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain hyperparameter or argument (negative threshold, dt >= tau, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: bad magic, truncated payload, inconsistent counts.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Network description that cannot be built.
class SpecError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad data values such as out-of-range class labels.
class InputError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsr
