#pragma once

#include <stdexcept>
#include <string>

namespace topocat {

// Base for every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that violates a documented precondition (bad cutoff, empty keep set, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Total Hilbert dimension or memory footprint above the configured cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Mode that does not exist in the space.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Operators living on different spaces combined together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// t1 == t2: the bulk gap closes and the winding number is undefined.
class GapClosingError : public Error {
 public:
  using Error::Error;
};

// Integrator step collapse, singular linear systems and similar failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Steady state not unique (kernel of the Liouvillian larger than one).
class AmbiguityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace topocat
