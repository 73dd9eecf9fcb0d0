#pragma once

#include <stdexcept>
#include <string>

namespace platoon {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Dimension or shape disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (stepping a finished episode,
// backward before forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace platoon
