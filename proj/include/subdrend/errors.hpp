#pragma once

#include <stdexcept>
#include <string>

namespace subdrend {

// Invalid configuration or contract violation; the CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem / serialization failure; the CLI maps this to exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace subdrend
