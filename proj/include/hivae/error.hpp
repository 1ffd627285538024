#pragma once

#include <stdexcept>
#include <string>

namespace hivae {

// Invalid user configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: graph files, datasets, checkpoints
// (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when no path exists between two nodes.
class NoPathError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss or parameters during training (CLI exit code 4).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape incompatibility.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace hivae
