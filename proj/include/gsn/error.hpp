#pragma once

#include <stdexcept>
#include <string>

namespace gsn {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar hyper-parameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input values lie outside the domain an operation accepts
/// (e.g. a non-binary vector handed to a binary-only corruptor).
class DomainError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File shorter than its header announces.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Tapes or cached state do not belong to the model they are used with.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Singular or near-degenerate linear algebra.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A posterior column cannot be formed because the corrupted state has zero mass.
class DegenerateSupportError : public Error {
 public:
  using Error::Error;
};

/// Chain is reducible or periodic, so its stationary vector is not unique/attracting.
class ErgodicityError : public Error {
 public:
  using Error::Error;
};

class IterationLimitError : public Error {
 public:
  IterationLimitError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace gsn
