#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdan {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter is outside its valid domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A label row is not one-hot, or a class index is out of range.
class LabelError : public Error {
 public:
  LabelError(const std::string& what, std::size_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Malformed file: bad magic, unsupported version, unparsable text.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended before the declared payload.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Caller-supplied data violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent training configuration or data set combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tape misuse, e.g. differentiating a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
              std::to_string(step)),
        epoch_(epoch),
        step_(step) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

}  // namespace fdan
