#pragma once

#include <stdexcept>
#include <string>

namespace rtatl {

// Bad or inconsistent configuration (unknown keys, invariant violations).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing or malformed dataset files (manifests, images, landmarks, flow).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape mismatch between operands.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rtatl
