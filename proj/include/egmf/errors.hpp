// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace egmf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where only finite values are allowed.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape: non-scalar loss, second backward, mixed tapes.
class GraphError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class SequenceLengthError : public Error {
 public:
  using Error::Error;
};

/// Base for everything that goes wrong while reading datasets and checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace egmf
