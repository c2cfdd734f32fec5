#pragma once

#include <stdexcept>
#include <string>

namespace df {

// Error taxonomy used across the library. Callers that need exit codes map
// IoError -> 2, CorruptArtifactError -> 3, everything else -> 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error("state error: " + msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index error: " + msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

struct TokenizeError : Error {
    explicit TokenizeError(const std::string& msg) : Error("tokenize error: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

struct CorruptArtifactError : Error {
    explicit CorruptArtifactError(const std::string& msg) : Error("corrupt artifact: " + msg) {}
};

}  // namespace df
