#pragma once

#include <stdexcept>
#include <string>

namespace sctreg {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (header key, parameter line, JSON field).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Payload shorter or longer than the header promises.
class TruncationError : public ParseError {
public:
    using ParseError::ParseError;
};

/// Input is well formed but uses a feature the engine does not implement.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Precondition or invariant violated by caller-supplied data.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite cost or parameters during optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace sctreg
