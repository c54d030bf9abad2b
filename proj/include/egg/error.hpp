#pragma once

#include <stdexcept>
#include <string>

namespace egg {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file could not be read or did not conform to its format.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Remote backend failed after exhausting its retries.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Configuration could not be resolved.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace egg
