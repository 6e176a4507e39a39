#pragma once

#include <stdexcept>
#include <string>

namespace slm {

// Base of the error taxonomy. Every malformed input or infeasible request
// maps to one of the subclasses below; library code never crashes or
// silently accepts bad data.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
struct IoError : Error {
    using Error::Error;
};

// Wrong magic bytes or unsupported version.
struct FormatError : Error {
    using Error::Error;
};

// Payload inconsistent with its header (truncation, length mismatch).
struct CorruptionError : Error {
    using Error::Error;
};

// Values violate a domain invariant (non-finite entries, out-of-range
// indices, duplicate ids, incompatible shapes).
struct ValidationError : Error {
    using Error::Error;
};

// Bad or infeasible configuration, detected before any computation.
struct ConfigError : Error {
    using Error::Error;
};

// A computation produced a non-finite intermediate or output; the message
// names where (layer index, output head).
struct NumericError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; message carries the step index.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace slm
