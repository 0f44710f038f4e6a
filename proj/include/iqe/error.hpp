#pragma once

#include <stdexcept>
#include <string>

namespace iqe {

// Base for all library errors. Runtime failures (I/O, numerical) use this
// directly; ConfigError marks bad user input that the CLI maps to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace iqe
