#pragma once

#include <stdexcept>
#include <string>

namespace kws {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or precondition violation.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed audio input.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Operation undefined for the given values (e.g. cosine of a zero vector).
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent user configuration (missing thresholds, bad flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corpus directory does not follow the expected layout.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Malformed events or annotation rows.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Binary container with wrong magic, version or size.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Optimisation diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace kws
