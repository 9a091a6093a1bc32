#pragma once

#include <stdexcept>
#include <string>

namespace qkd {

// Error taxonomy used across the toolkit. Everything derives from
// std::runtime_error so callers can catch broadly or precisely.

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct SpecError : std::runtime_error {
  explicit SpecError(const std::string& msg) : std::runtime_error("spec error: " + msg) {}
};

}  // namespace qkd
