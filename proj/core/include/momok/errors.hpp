#pragma once

#include <stdexcept>
#include <string>

namespace momok {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, DataError -> 3, CompatError -> 4.
// Contract violations (bad arguments to in-process APIs) use
// std::invalid_argument; numeric failures use NumericError.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class CompatError : public std::runtime_error {
public:
    explicit CompatError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace momok
