#include "mftsim/fd_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mft {

GradCheckReport grad_check(const LossFn& loss, const GradFn& grad, const ParamVector& theta,
                           double eps, double tol) {
    require(eps > 0.0, "grad_check: eps must be positive");
    ParamVector g = grad(theta);
    require(g.size() == theta.size(), "grad_check: gradient length mismatch");

    GradCheckReport rep;
    ParamVector probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + eps;
        double lp = loss(probe);
        probe[i] = theta[i] - eps;
        double lm = loss(probe);
        probe[i] = theta[i];
        if (!std::isfinite(lp) || !std::isfinite(lm))
            throw NumericFailure("grad_check: loss not finite at probe coordinate " +
                                 std::to_string(i));
        double fd = (lp - lm) / (2.0 * eps);
        double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
        double rel = std::abs(g[i] - fd) / denom;
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_coord = static_cast<long>(i);
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

ParamVector hvp_fd(const GradFn& grad, const ParamVector& theta, const ParamVector& v,
                   double eps) {
    require(eps > 0.0, "hvp_fd: eps must be positive");
    require(v.size() == theta.size(), "hvp_fd: direction length mismatch");
    double vn = norm(v);
    require(vn > 0.0, "hvp_fd: zero direction");

    ParamVector plus = theta;
    axpy(eps, v, plus);
    ParamVector minus = theta;
    axpy(-eps, v, minus);
    ParamVector gp = grad(plus);
    ParamVector gm = grad(minus);
    ParamVector out(theta.size());
    double inv = 1.0 / (2.0 * eps);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) * inv;
    return out;
}

double vec_cosine(const ParamVector& a, const ParamVector& b) {
    double na = norm(a), nb = norm(b);
    if (na <= 0.0 || nb <= 0.0) throw DegenerateInput("vec_cosine: zero-norm input");
    double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

ParamVector fd_gradient(const LossFn& loss, const ParamVector& theta, double eps) {
    ParamVector g(theta.size());
    ParamVector probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + eps;
        double lp = loss(probe);
        probe[i] = theta[i] - eps;
        double lm = loss(probe);
        probe[i] = theta[i];
        g[i] = (lp - lm) / (2.0 * eps);
    }
    return g;
}

} // namespace mft
