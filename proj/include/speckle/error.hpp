#pragma once

#include <stdexcept>
#include <string>

namespace speckle {

/// Base class for all toolkit errors. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated cross-field constraint (exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (exit code 1).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Quadrature or iteration failed to reach its tolerance (exit code 2).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File missing, unreadable or malformed (exit code 3).
class IoError : public Error {
public:
    using Error::Error;
};

/// Tabulated data queried outside its range.
class OutOfRangeError : public Error {
public:
    using Error::Error;
};

/// Requested data was not retained by the producing run.
class UnavailableError : public Error {
public:
    using Error::Error;
};

}  // namespace speckle
