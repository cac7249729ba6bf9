#pragma once

#include <stdexcept>
#include <string>

namespace pdenet {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Grid, filter or batch shapes that do not fit together.
class SizeMismatchError : public Error {
  public:
    using Error::Error;
};

/// A filter or parameter vector that breaks its moment constraints.
class ConstraintError : public Error {
  public:
    using Error::Error;
};

/// A time integrator or forward pass produced non-finite values.
class BlowUpError : public Error {
  public:
    BlowUpError(const std::string& what, int step) : Error(what), step_(step) {}
    [[nodiscard]] int step() const noexcept { return step_; }

  private:
    int step_;
};

/// A field without variation where a normalization needs one.
class DegenerateFieldError : public Error {
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

} // namespace pdenet
