#pragma once

#include <stdexcept>
#include <string>

namespace kronsum {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A parameter is outside its documented range (rank bound, lags, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Input data violates a precondition (non-finite, indefinite, too short).
class DataError : public Error {
 public:
  using Error::Error;
};

// A variable has zero or negative variance where a correlation is needed.
class DegenerateVariableError : public DataError {
 public:
  DegenerateVariableError(long index, double variance)
      : DataError("degenerate variable at index " + std::to_string(index) +
                  " (variance " + std::to_string(variance) + ")"),
        index_(index) {}
  long index() const { return index_; }

 private:
  long index_;
};

// A linear solve failed: the matrix is not positive definite.
class ConditioningError : public Error {
 public:
  ConditioningError(const std::string& what, double min_eigenvalue)
      : Error(what + " (min eigenvalue " + std::to_string(min_eigenvalue) + ")"),
        min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

}  // namespace kronsum
