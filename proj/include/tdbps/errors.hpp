#pragma once

#include <stdexcept>
#include <string>

namespace tdbps {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The displaced user position coincides with a base station, so no
// line-of-sight direction exists.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

// Normal matrix singular or too ill-conditioned to solve.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

// Inputs that disagree in size or index range.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

// Malformed values in a constructed domain object or a config document.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace tdbps
