#pragma once

#include <stdexcept>
#include <string>

namespace brite {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operands have incompatible grid or tensor shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid argument value (non-finite coordinate, nonpositive period, ...).
struct InvalidInput : Error {
    explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

/// A computation produced NaN/Inf where finite values are required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// Malformed or unsupported file contents.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Invalid run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

} // namespace brite
