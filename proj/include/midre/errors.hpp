#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace midre {

// Shape disagreement between tensors (message names both shapes).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a numeric kernel.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range index (class label, token id, row).
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent or invalid configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (files, records).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary decode failure (bad magic, truncation, dims vs payload).
struct DecodeError : std::runtime_error {
    explicit DecodeError(const std::string& msg) : std::runtime_error(msg) {}
};

// HTTP transport failure after retries are exhausted; keeps one line per attempt.
struct TransportError : std::runtime_error {
    std::vector<std::string> attempts;
    TransportError(const std::string& msg, std::vector<std::string> attempt_log)
        : std::runtime_error(msg), attempts(std::move(attempt_log)) {}
};

// Endpoint answered but not with the expected JSON shape.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace midre
