#pragma once

#include <stdexcept>
#include <string>

namespace dtta {

/// Base of every error raised by the library. `exit_code()` maps the error
/// family onto the CLI contract: 1 usage/config, 2 data, 3 numerical fault.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

// Usage / configuration family.
class ParameterError : public Error {
 public:
  using Error::Error;
};
class DimensionError : public Error {
 public:
  using Error::Error;
};
class OrderingError : public Error {
 public:
  using Error::Error;
};
class RangeError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data family.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};
class InsufficientFramesError : public DataError {
 public:
  using DataError::DataError;
};
class KindMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class MissingFrameError : public DataError {
 public:
  using DataError::DataError;
};
class ResolutionError : public DataError {
 public:
  using DataError::DataError;
};
class ManifestError : public DataError {
 public:
  using DataError::DataError;
};
class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointMissingKeyError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Numerical family.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};
class TrainingFault : public NumericalError {
 public:
  using NumericalError::NumericalError;
};
class AdaptationFault : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace dtta
