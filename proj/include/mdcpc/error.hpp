#pragma once

#include <stdexcept>
#include <string>

namespace mdcpc {

// Base of every exception thrown by the library. The CLI maps subclasses to
// exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Grid / tensor shapes that do not fit together.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Mismatched or unsupported model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN / inf detected in a forward pass or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Dataset files missing or unreadable.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Files that exist but do not have the expected layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdcpc
