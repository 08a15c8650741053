#pragma once

#include <stdexcept>
#include <string>

namespace rxm {

// Base of every error the engine raises. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up. Messages name the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture / training hyperparameters or config-file contents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward twice, step out of range, missing gradients, empty dataset.
class UsageError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint with unknown magic or unsupported version.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace rxm
