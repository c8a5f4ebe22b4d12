#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mftsim/errors.hpp"

namespace mft {

/// Flat real-valued parameter vector. Immutable by convention once produced
/// by an optimizer step or an initializer; copies are cheap enough at desk
/// scale that all transformations return fresh vectors.
struct ParamVector {
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
    explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    const double* data() const { return values.data(); }
    double* data() { return values.data(); }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double dot(const ParamVector& a, const ParamVector& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

/// y += c * x
inline void axpy(double c, const ParamVector& x, ParamVector& y) {
    require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    ParamVector r = a;
    axpy(1.0, b, r);
    return r;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
    ParamVector r = a;
    axpy(-1.0, b, r);
    return r;
}

inline ParamVector scale(const ParamVector& a, double c) {
    ParamVector r = a;
    for (double& v : r.values) v *= c;
    return r;
}

} // namespace mft
