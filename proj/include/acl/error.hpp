#pragma once

#include <stdexcept>
#include <string>

namespace acl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Operation evaluated outside its domain: log of a non-positive value,
// division by zero, cosine of a zero-norm vector.
struct DomainError : Error {
  using Error::Error;
};

// A NaN or infinity appeared in a forward value or a gradient.
struct NumericError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace acl
