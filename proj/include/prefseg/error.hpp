#pragma once

#include <stdexcept>
#include <string>

namespace prefseg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, manifests, shapes).
struct ValidationError : Error {
    using Error::Error;
};

// Two operands whose grids or dimensions disagree.
struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace prefseg
