#pragma once

#include <stdexcept>
#include <string>

namespace dadet {

// Error categories map 1:1 onto CLI exit codes (see tools/main.cpp):
// ConfigError -> 2, IoError -> 3, NumericError -> 4, CheckpointError -> 5.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dadet
