#pragma once

#include <stdexcept>
#include <string>

namespace cnorm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad extents, mismatched shapes or ranks.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A masked reduction selected no elements.
class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

/// Too few elements to form a statistic (e.g. a batch of one value).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Layer state used before it was populated (eval before any training step).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid mixture parameters or responsibilities.
class MixtureError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration, context maps, or model specs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a place where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite gradient.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : NumericError("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace cnorm
