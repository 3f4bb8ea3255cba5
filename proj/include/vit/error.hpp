#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A model or data configuration is internally inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A scalar hyperparameter is outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (e.g. non-scalar loss passed to backward).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input values are outside their domain (labels, index sets, records).
class InputError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class RegularizationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace vit
