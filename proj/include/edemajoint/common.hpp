#pragma once

#include <stdexcept>
#include <string>

namespace edemajoint {

// Error hierarchy shared across modules. Every throw site uses the most
// specific type so callers can map failures to exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

struct IntegrityError : Error {
    explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

struct ParameterError : Error {
    explicit ParameterError(const std::string& msg) : Error(msg) {}
};

struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

struct EmptyDocumentError : Error {
    explicit EmptyDocumentError(const std::string& msg) : Error(msg) {}
};

}  // namespace edemajoint
