#pragma once

#include <stdexcept>
#include <string>

namespace canlearn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: shapes, symmetry, ranges, schema fields.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A covariance had an eigenvalue below the allowed negative floor.
class IndefiniteMatrixError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Pushforward and target covariances live on supports of different rank.
class SupportMismatchError : public Error {
 public:
  using Error::Error;
};

/// The requested object cannot exist for these shapes or masks.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Fine/coarse orientation is reversed (fewer fine variables than coarse ones).
class OrientationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Two routes that must agree did not.
class InternalConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace canlearn
