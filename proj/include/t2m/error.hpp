#pragma once

#include <stdexcept>
#include <string>

namespace t2m {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or length disagreement between operands.
struct DimError : Error {
    using Error::Error;
};

// Index outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

// Malformed data file.
struct ParseError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

// API misuse: stale cache, wrong bundle kind, empty input set.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite value where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

// Missing or unwritable file.
struct IoError : Error {
    using Error::Error;
};

}  // namespace t2m
