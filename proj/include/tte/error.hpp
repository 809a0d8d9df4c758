#pragma once

#include <stdexcept>
#include <string>

namespace tte {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data: wrong arity, bad header, manifest count mismatch.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Inconsistent configuration: shape mismatches, invalid hyper-parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Remote embedding provider could not be reached or answered garbage.
class TransportError : public Error {
public:
    using Error::Error;
};

}  // namespace tte
