#pragma once

#include <stdexcept>
#include <string>

namespace softcbm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition or input invariant was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing the filesystem failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents do not follow the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload bytes disagree with the recorded checksum.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Strict checkpoint loading found missing, unexpected, or mis-shaped tensors.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A loss or activation became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace softcbm
