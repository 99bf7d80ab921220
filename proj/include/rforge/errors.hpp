#pragma once

#include <stdexcept>
#include <string>

namespace rforge {

// Error taxonomy mirrors the CLI exit codes: usage/config -> 1,
// data -> 2, numerical abort -> 3. I/O failures count as data errors.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgError : std::runtime_error {
    explicit ArgError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rforge
