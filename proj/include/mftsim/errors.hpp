#pragma once

#include <stdexcept>
#include <string>

namespace mft {

/// Bad arguments, wrong channels, shape mismatches.
struct ContractViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf encountered in a numeric pipeline.
struct NumericFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Zero-norm vectors, identical MMD samples, other degenerate inputs.
struct DegenerateInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Attack deltas too close to parallel to span a plane.
struct DegeneratePlane : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The toy game itself is misconfigured (oracle attack on the undefended
/// model fails the joint success condition).
struct EnvironmentInvalid : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

} // namespace mft
