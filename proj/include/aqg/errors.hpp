#pragma once

#include <stdexcept>
#include <string>

namespace aqg {

// Base for every error raised by the library. Each subclass maps onto one CLI
// exit code (see tools/aqg_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or inconsistent options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Token id outside the vocabulary.
class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

// Input that the operation is undefined for (e.g. empty answer pooling).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Corrupted, truncated or incompatible checkpoint file.
class IntegrityError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aqg
