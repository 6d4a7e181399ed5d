#pragma once

#include <stdexcept>
#include <string>

namespace dagp {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Graph has no usable edges (max in-degree or out-degree is zero).
struct DegenerateGraph : Error {
    using Error::Error;
};

// An argument is outside its documented domain.
struct InvalidParameter : Error {
    using Error::Error;
};

// Vector dimensions do not agree with the object they are used with.
struct DimensionMismatch : Error {
    using Error::Error;
};

// The constraint set contains no points.
struct EmptySet : Error {
    using Error::Error;
};

// Iterative routine failed to reach its tolerance within the iteration cap.
struct NonConvergence : Error {
    using Error::Error;
};

// Point claimed to be a set member fails the membership test.
struct NotAMember : Error {
    using Error::Error;
};

// A projection oracle reported failure during a solver round.
struct ProjectionFailure : Error {
    using Error::Error;
};

// Solver requires unconstrained nodes but a nontrivial constraint was found.
struct UnsupportedConstraint : Error {
    using Error::Error;
};

// Transport marginals are inconsistent (mass mismatch or negative entries).
struct InvalidMarginal : Error {
    using Error::Error;
};

// Reference normals are required but unavailable for this constraint family.
struct MissingReference : Error {
    using Error::Error;
};

// Generalized eigensolver could not factor the pencil.
struct IllConditionedPencil : Error {
    using Error::Error;
};

// Scaling factors left the representable range.
struct NumericalUnderflow : Error {
    using Error::Error;
};

// Experiment configuration is invalid; message names the offending field.
struct ConfigError : Error {
    using Error::Error;
};

// Too few trace records to fit a rate.
struct InsufficientData : Error {
    using Error::Error;
};

}  // namespace dagp
