#pragma once

#include <stdexcept>
#include <string>

namespace splab {

// Base of every error thrown by the library. The C API maps each subclass to
// its own status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised for strict-schema violations in experiment configs. `path` is the
// JSON pointer of the offending key.
class SchemaError : public ConfigError {
 public:
  SchemaError(std::string path, const std::string& what)
      : ConfigError(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace splab
