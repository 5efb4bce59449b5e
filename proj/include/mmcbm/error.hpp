#pragma once

#include <stdexcept>
#include <string>

namespace mmcbm {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the service maps subclasses to HTTP codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition on an argument violated (empty input, value out of range).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Vector or matrix dimensions disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed file, bad magic, unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Lookup of an id that does not exist.
class NotFound : public Error {
 public:
  using Error::Error;
};

// Operation conflicts with existing state (duplicate add, masked-out edit).
class Conflict : public Error {
 public:
  using Error::Error;
};

// External language-model provider failed or returned something unusable.
// The raw payload is kept for audit.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

}  // namespace mmcbm
