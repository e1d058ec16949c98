#pragma once

#include <stdexcept>
#include <string>

namespace memshape {

// Invalid experiment/provider configuration. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed prior file, graph checkpoint, or CSV input.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor or vector shapes do not line up.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or gradient. The CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Out-of-range action passed to an environment.
struct InvalidActionError : std::runtime_error {
    explicit InvalidActionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace memshape
