#ifndef SPHEREFLOW_ERRORS_HPP
#define SPHEREFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace sphereflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree (token dimension vs. interaction matrix, etc.).
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A normalization was asked to divide by a (numerically) zero norm.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A vector that must lie on the unit sphere does not.
class NotUnit : public Error {
 public:
  using Error::Error;
};

/// Linearized dynamics left the admissible norm band.
class NormDrift : public Error {
 public:
  using Error::Error;
};

/// Parameter outside its documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace sphereflow

#endif  // SPHEREFLOW_ERRORS_HPP
