#pragma once

#include <stdexcept>
#include <string>

namespace dipir {

/// Bad argument value or mismatched shapes.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A sampling or normalization distribution has no mass (e.g. an all-black map).
class DegenerateDistribution : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Scene, mesh, or image could not be loaded.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The inserted object does not cover any pixel.
class ObjectNotVisible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Remote guidance failed (transport, timeout, malformed or mis-shaped reply).
class GuidanceUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimization could not proceed (too many skipped steps, non-finite state).
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dipir
