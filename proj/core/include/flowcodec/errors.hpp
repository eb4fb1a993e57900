#pragma once

#include <stdexcept>
#include <string>

namespace flowcodec {

// Base of every error the library throws on purpose. The CLI maps these to
// exit code 1 (user error); anything else escaping is an internal failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input files and bitstreams.
class DecodeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcodec
