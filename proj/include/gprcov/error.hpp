#pragma once

#include <stdexcept>
#include <string>

namespace gprcov {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, rank deficiency, eigenvalues outside a layer's domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (exit code 2 at the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data. Carries the offending path.
class FormatError : public Error {
 public:
  FormatError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class LabelRangeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gprcov
