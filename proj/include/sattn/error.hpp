#pragma once

#include <stdexcept>
#include <string>

namespace sattn {

// Error taxonomy, mapped to CLI exit codes: validation family -> 2, runtime -> 3.

// Dimension / layout mismatch between operands.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Precondition violation on values or configuration fields.
struct ValidationError : std::invalid_argument {
    explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Inconsistent run wiring (e.g. a shared layer without a reference bundle).
struct ConfigError : ValidationError {
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace sattn
