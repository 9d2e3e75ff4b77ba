#pragma once

#include <stdexcept>
#include <string>

namespace deepfidelity {

// Error taxonomy. CLI maps DomainError/DimensionError/ConfigError/FormatError
// to exit code 1 and IoError to exit code 2.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operand shapes do not line up.
struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (bad groups, non-divisible heads, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Input value outside the operation's domain.
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Malformed file contents (bad magic, truncation, CRC mismatch, bad CSV).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// API misuse that indicates a bug in the caller (backward on non-scalar, ...).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

} // namespace deepfidelity
