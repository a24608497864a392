#pragma once

#include <stdexcept>
#include <string>

namespace i2i {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or geometry mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Value outside an operation's mathematical domain (log of non-positive, non-PSD matrix, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Violated call contract (non-scalar loss, missing gradients, too few samples).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Object used in the wrong state, e.g. backward on an already consumed tape.
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed image file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint that cannot be loaded: bad version, truncation, checksum or shape mismatch.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace i2i
