#pragma once

#include <stdexcept>
#include <string>

namespace phantom {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Misuse of the gradient tape (non-scalar loss, double backward, ...).
struct TapeError : Error {
    using Error::Error;
};

// Bad argument values, malformed files, diverged training.
struct ValueError : Error {
    using Error::Error;
};

} // namespace phantom
