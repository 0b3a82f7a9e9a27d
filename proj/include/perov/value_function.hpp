#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "perov/errors.hpp"

namespace perov {

using GridPtr = std::shared_ptr<const std::vector<double>>;

inline GridPtr make_grid(std::vector<double> points) {
    if (points.empty()) throw InvalidInput("grid: must contain at least one point");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!std::isfinite(points[i])) throw InvalidInput("grid: point " + std::to_string(i) + " is not finite");
        if (i > 0 && !(points[i] > points[i - 1]))
            throw InvalidInput("grid: points must be strictly increasing (index " + std::to_string(i) + ")");
    }
    return std::make_shared<const std::vector<double>>(std::move(points));
}

/// `n` points spaced geometrically on [lo, hi], both endpoints included exactly.
inline std::vector<double> geometric_grid(double lo, double hi, std::size_t n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2) throw InvalidInput("geometric_grid: need 0 < lo < hi and n >= 2");
    std::vector<double> g(n);
    const double ratio = std::log(hi / lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) g[i] = lo * std::exp(ratio * static_cast<double>(i));
    g.front() = lo;
    g.back() = hi;
    return g;
}

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
    if (!(hi > lo) || n < 2) throw InvalidInput("uniform_grid: need lo < hi and n >= 2");
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    g.back() = hi;
    return g;
}

/// Linear interpolation weights for one off-grid abscissa.
struct Stencil {
    std::size_t lo = 0;
    double weight_hi = 0.0;  // weight on lo + 1; zero at or beyond the grid ends
    std::int8_t clamped = 0;  // -1 below the grid, +1 above, 0 inside
};

inline Stencil locate(std::span<const double> grid, double x) {
    const std::size_t n = grid.size();
    if (x <= grid.front()) return {0, 0.0, static_cast<std::int8_t>(x < grid.front() ? -1 : 0)};
    if (x >= grid.back()) return {n - 1, 0.0, static_cast<std::int8_t>(x > grid.back() ? 1 : 0)};
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - grid[lo]) / (grid[hi] - grid[lo]);
    if (t == 0.0) return {lo, 0.0, 0};
    return {lo, t, 0};
}

/// Real values on (x-grid) x {0, ..., Z-1}. Off-grid evaluation is the piecewise
/// linear interpolant in x with constant extrapolation past either end.
class ValueFunction {
public:
    ValueFunction() = default;
    ValueFunction(GridPtr grid, std::size_t states, std::vector<double> values)
        : grid_(std::move(grid)), states_(states), values_(std::move(values)) {
        if (!grid_) throw InvalidInput("ValueFunction: null grid");
        if (states_ == 0) throw InvalidInput("ValueFunction: need at least one exogenous state");
        if (values_.size() != grid_->size() * states_)
            throw InvalidInput("ValueFunction: expected " + std::to_string(grid_->size() * states_) + " values, got " +
                               std::to_string(values_.size()));
        for (double v : values_)
            if (!std::isfinite(v)) throw InvalidInput("ValueFunction: values must be finite");
    }

    static ValueFunction constant(GridPtr grid, std::size_t states, double c) {
        const std::size_t n = grid ? grid->size() : 0;
        return ValueFunction(std::move(grid), states, std::vector<double>(n * states, c));
    }
    static ValueFunction zeros(GridPtr grid, std::size_t states) { return constant(std::move(grid), states, 0.0); }

    template <class F>
    static ValueFunction tabulate(GridPtr grid, std::size_t states, F&& f) {
        std::vector<double> v(grid->size() * states);
        for (std::size_t z = 0; z < states; ++z)
            for (std::size_t i = 0; i < grid->size(); ++i) v[z * grid->size() + i] = f((*grid)[i], z);
        return ValueFunction(std::move(grid), states, std::move(v));
    }

    std::size_t points() const noexcept { return grid_ ? grid_->size() : 0; }
    std::size_t states() const noexcept { return states_; }
    const GridPtr& grid_ptr() const noexcept { return grid_; }
    std::span<const double> grid() const noexcept { return *grid_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> column(std::size_t z) const noexcept { return {values_.data() + z * points(), points()}; }

    double at(std::size_t i, std::size_t z) const noexcept { return values_[z * points() + i]; }

    double at(const Stencil& s, std::size_t z) const noexcept {
        const double* col = values_.data() + z * points();
        return s.weight_hi == 0.0 ? col[s.lo] : (1.0 - s.weight_hi) * col[s.lo] + s.weight_hi * col[s.lo + 1];
    }

    double eval(double x, std::size_t z) const { return at(locate(grid(), x), z); }

    bool same_grid(const ValueFunction& other) const noexcept {
        if (grid_ == other.grid_) return states_ == other.states_;
        return grid_ && other.grid_ && *grid_ == *other.grid_ && states_ == other.states_;
    }

    friend bool operator==(const ValueFunction& a, const ValueFunction& b) {
        return a.same_grid(b) && a.values_ == b.values_;
    }

private:
    GridPtr grid_;
    std::size_t states_ = 0;
    std::vector<double> values_;
};

/// Adds c(z) to every grid value in state z.
inline ValueFunction shift(const ValueFunction& v, std::span<const double> c) {
    if (c.size() != v.states()) throw InvalidInput("shift: vector length does not match state count");
    std::vector<double> out(v.values().begin(), v.values().end());
    for (std::size_t z = 0; z < v.states(); ++z)
        for (std::size_t i = 0; i < v.points(); ++i) out[z * v.points() + i] += c[z];
    return ValueFunction(v.grid_ptr(), v.states(), std::move(out));
}

/// Positive weight kappa(x, z). Families whose transition ratio kappa(x', z') / kappa(x, z)
/// is monotone in x declare it, which makes grid suprema of that ratio exact.
class WeightFunction {
public:
    using Fn = std::function<double(double, std::size_t)>;

    WeightFunction(Fn f, std::string name, bool ratio_monotone)
        : f_(std::move(f)), name_(std::move(name)), ratio_monotone_(ratio_monotone) {}

    static WeightFunction unit() {
        return {[](double, std::size_t) { return 1.0; }, "unit", true};
    }
    /// kappa(x, z) = x + offset
    static WeightFunction affine(double offset) {
        if (!(offset > 0.0) || !std::isfinite(offset)) throw InvalidInput("affine weight: offset must be positive");
        return {[offset](double x, std::size_t) { return x + offset; }, "affine(" + std::to_string(offset) + ")", true};
    }
    /// kappa(x, z) = x^exponent; x' = 0 maps to 0.
    static WeightFunction power(double exponent) {
        if (!(exponent > 0.0)) throw InvalidInput("power weight: exponent must be positive");
        return {[exponent](double x, std::size_t) { return x > 0.0 ? std::pow(x, exponent) : 0.0; },
                "power(" + std::to_string(exponent) + ")", true};
    }
    /// kappa(x, z) = (x + offset)^exponent
    static WeightFunction power_affine(double offset, double exponent) {
        if (!(offset > 0.0) || !(exponent > 0.0)) throw InvalidInput("power_affine weight: bad parameters");
        return {[offset, exponent](double x, std::size_t) { return std::pow(x + offset, exponent); },
                "power_affine(" + std::to_string(offset) + "," + std::to_string(exponent) + ")", true};
    }

    double operator()(double x, std::size_t z) const { return f_(x, z); }
    const std::string& name() const noexcept { return name_; }
    bool ratio_monotone() const noexcept { return ratio_monotone_; }
    bool is_unit() const noexcept { return name_ == "unit"; }

    /// The weight sampled on a grid; throws unless strictly positive and finite there.
    ValueFunction on_grid(const GridPtr& grid, std::size_t states) const {
        std::vector<double> v(grid->size() * states);
        for (std::size_t z = 0; z < states; ++z)
            for (std::size_t i = 0; i < grid->size(); ++i) {
                const double k = f_((*grid)[i], z);
                if (!(k > 0.0) || !std::isfinite(k))
                    throw InvalidInput("weight " + name_ + " is not positive at grid point " + std::to_string(i) +
                                       ", state " + std::to_string(z));
                v[z * grid->size() + i] = k;
            }
        return ValueFunction(grid, states, std::move(v));
    }

private:
    Fn f_;
    std::string name_;
    bool ratio_monotone_;
};

/// Pointwise product kappa * v on the grid of v.
inline ValueFunction multiply(const WeightFunction& kappa, const ValueFunction& v) {
    const auto k = kappa.on_grid(v.grid_ptr(), v.states());
    std::vector<double> out(v.values().size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = k.values()[j] * v.values()[j];
    return ValueFunction(v.grid_ptr(), v.states(), std::move(out));
}

/// Pointwise quotient v / kappa on the grid of v.
inline ValueFunction divide(const ValueFunction& v, const WeightFunction& kappa) {
    const auto k = kappa.on_grid(v.grid_ptr(), v.states());
    std::vector<double> out(v.values().size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = v.values()[j] / k.values()[j];
    return ValueFunction(v.grid_ptr(), v.states(), std::move(out));
}

}  // namespace perov
