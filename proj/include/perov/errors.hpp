#pragma once

#include <stdexcept>
#include <string>

namespace perov {

/// Malformed arguments: wrong shapes, non-finite entries, out-of-range parameters.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The dynamic program itself is ill-posed (empty action set, non-finite reward, ...).
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A routine was called outside the regime where its result means anything.
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Signals a defect in this library rather than in the caller's input.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace perov
