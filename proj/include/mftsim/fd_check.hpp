#pragma once

#include <functional>

#include "mftsim/param_vector.hpp"

namespace mft {

using LossFn = std::function<double(const ParamVector&)>;
using GradFn = std::function<ParamVector(const ParamVector&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    long worst_coord = -1;
    bool pass = false;
};

/// Coordinate-wise comparison of an analytic gradient against central
/// differences. Relative error per coordinate uses
/// |ad - fd| / max(|ad|, |fd|, 1e-8). Throws NumericFailure if the loss
/// returns NaN at any probe point.
GradCheckReport grad_check(const LossFn& loss, const GradFn& grad, const ParamVector& theta,
                           double eps, double tol);

/// Central-difference Hessian-vector product:
/// (grad(theta + eps v) - grad(theta - eps v)) / (2 eps).
ParamVector hvp_fd(const GradFn& grad, const ParamVector& theta, const ParamVector& v, double eps);

/// <a,b> / (|a||b|), clamped to [-1, 1]. Throws DegenerateInput on zero norm.
double vec_cosine(const ParamVector& a, const ParamVector& b);

/// Central-difference gradient of a scalar loss (test oracle helper).
ParamVector fd_gradient(const LossFn& loss, const ParamVector& theta, double eps);

} // namespace mft
