#pragma once

#include <stdexcept>
#include <string>

namespace ppgstress {

// Bad input data, configuration or usage. Maps to CLI exit status 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape precondition violated by a numerical kernel or layer.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, divergence or an unstable filter. Maps to exit status 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ppgstress
