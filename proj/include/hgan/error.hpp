#pragma once

#include <stdexcept>
#include <string>

namespace hgan {

// Invalid or internally inconsistent configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad input data: malformed blobs, manifest mismatches, degenerate vectors
// (CLI exit code 2).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape mismatch; message names both shapes.
struct ShapeError : DataError {
    explicit ShapeError(const std::string& what) : DataError(what) {}
};

// A verification oracle (gradient check) failed (CLI exit code 3).
struct CheckError : std::runtime_error {
    explicit CheckError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace hgan
