#pragma once

#include <stdexcept>
#include <string>

namespace densereg {

/// Base for every error raised by the library. Callers that only need to
/// report a failure can catch this; the CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the operation's domain (lo >= hi, batch < 2, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Object used in the wrong lifecycle state (backward before forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or non-finite input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Linear system without a unique solution.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver ran out of iterations.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Statistic is undefined for the given input (zero variance, ...).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint problems. Subclasses distinguish the failure.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace densereg
