#pragma once

#include <stdexcept>
#include <string>

namespace t2av {

// Error taxonomy. The CLI maps each family onto an exit code:
//   InvalidArgument -> 1 (usage), DataError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// ---- data / format errors --------------------------------------------------

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class BadMagic : public DataError {
 public:
  using DataError::DataError;
};

class VersionMismatch : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedPayload : public DataError {
 public:
  using DataError::DataError;
};

class NonFiniteValue : public DataError {
 public:
  using DataError::DataError;
};

class ShapeMismatch : public DataError {
 public:
  using DataError::DataError;
};

class IndexOutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientRows : public DataError {
 public:
  using DataError::DataError;
};

class InvalidDistribution : public DataError {
 public:
  using DataError::DataError;
};

// ---- numerical failures ----------------------------------------------------

class NotConverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IndefiniteMatrix : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class AsymmetricMatrix : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ZeroNormVector : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace t2av
