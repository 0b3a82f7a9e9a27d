#pragma once

/// Vector-valued distances between value functions: one weighted sup distance per
/// exogenous state, and the scalar metric obtained by taking their maximum.
///
/// Suprema over x are maxima over the grid. Every function the solver builds is
/// piecewise linear between grid points, so for those the grid maximum is the
/// supremum of the interpolants.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "perov/errors.hpp"
#include "perov/value_function.hpp"

namespace perov {

class VectorDistance {
public:
    VectorDistance() = default;
    explicit VectorDistance(std::vector<double> components) : c_(std::move(components)) {
        for (double x : c_)
            if (!std::isfinite(x) || x < 0.0) throw InvalidInput("VectorDistance: components must be finite and >= 0");
    }

    std::size_t size() const noexcept { return c_.size(); }
    double operator[](std::size_t z) const noexcept { return c_[z]; }
    std::span<const double> components() const noexcept { return c_; }
    const std::vector<double>& vec() const noexcept { return c_; }

    friend bool operator==(const VectorDistance&, const VectorDistance&) = default;

private:
    std::vector<double> c_;
};

namespace detail {

inline void check_comparable(const ValueFunction& a, const ValueFunction& b, const char* who) {
    if (!a.same_grid(b)) throw InvalidInput(std::string(who) + ": value functions live on different grids");
}

}  // namespace detail

/// d_z(v1, v2) = max_x |v1(x, z) - v2(x, z)| / kappa(x, z)
inline VectorDistance vector_distance(const ValueFunction& v1, const ValueFunction& v2, const WeightFunction& kappa) {
    detail::check_comparable(v1, v2, "vector_distance");
    const std::size_t n = v1.points();
    std::vector<double> d(v1.states(), 0.0);
    const bool unit = kappa.is_unit();
    const ValueFunction k = unit ? ValueFunction() : kappa.on_grid(v1.grid_ptr(), v1.states());
    for (std::size_t z = 0; z < v1.states(); ++z) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = std::abs(v1.at(i, z) - v2.at(i, z));
            m = std::max(m, unit ? diff : diff / k.at(i, z));
        }
        if (!std::isfinite(m)) throw InvalidInput("vector_distance: non-finite distance");
        d[z] = m;
    }
    return VectorDistance(std::move(d));
}

/// Unweighted per-state sup distance, the metric in which the scaled operator contracts.
inline VectorDistance vector_distance(const ValueFunction& v1, const ValueFunction& v2) {
    return vector_distance(v1, v2, WeightFunction::unit());
}

inline double sup_collapse(const VectorDistance& d) {
    double m = 0.0;
    for (double x : d.components()) m = std::max(m, x);
    return m;
}

/// ||v||_kappa = max_z max_x |v(x, z)| / kappa(x, z)
inline double weighted_norm(const ValueFunction& v, const WeightFunction& kappa) {
    return sup_collapse(vector_distance(v, ValueFunction::zeros(v.grid_ptr(), v.states()), kappa));
}

}  // namespace perov
