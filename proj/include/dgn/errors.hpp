#pragma once

#include <stdexcept>
#include <string>

namespace dgn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input records, configuration or model state.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached the optimizer or a loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgn
