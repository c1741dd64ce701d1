#pragma once

#include <stdexcept>
#include <string>

namespace hcn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An operator produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// No coding matrix satisfies the requested constraints.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// File system or format failure (missing file, truncated archive, bad checksum).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hcn
