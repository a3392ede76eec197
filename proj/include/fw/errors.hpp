#pragma once
// Error taxonomy. The CLI maps each category to a distinct exit code;
// library code throws these so callers can tell bad configuration from
// broken files from numerical blowups.

#include <stdexcept>
#include <string>

namespace fw {

// Invalid configuration / arguments (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Missing or malformed files and artifacts (CLI exit code 3).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// Non-finite values or diverging optimizations (CLI exit code 4).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace fw
