#pragma once

#include <stdexcept>
#include <string>

namespace dsprune {

// Error taxonomy used across the library. The CLI maps these onto exit codes
// (config -> 1, data/format -> 2, run -> 3).

/// Tensor dimensions do not line up for the requested operation.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (hyperparameters, layer geometry, config files).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller-supplied value violates a precondition (bad label, unknown layer id, ...).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operation issued in the wrong state (backward without a tape, stale prune plan, ...).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or truncated file contents.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Runtime failure of a long-running stage (diverging loss, failed sweep cell).
struct RunError : std::runtime_error {
    explicit RunError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dsprune
