#pragma once

#include <stdexcept>
#include <string>

namespace dpg {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or invalid arguments supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: datasets, refined-prompt files, manifests, fixtures.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpg
