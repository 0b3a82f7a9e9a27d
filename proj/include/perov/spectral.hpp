#pragma once

/// Dense square matrices with nonnegative entries, their sup-induced operator
/// norm, and a certified spectral radius.
///
/// The radius is bracketed by Collatz-Wielandt quotients min_z (Bv)_z / v_z
/// and max_z (Bv)_z / v_z, valid for any nonnegative B and any positive v.
/// The iterate v is taken from powers of the shifted matrix I + B/||B||,
/// which is primitive whenever B is irreducible, so the bracket closes for
/// periodic matrices too. Reducible matrices are handled by dropping the
/// negligible part of the support of v for the lower quotient. The Gelfand
/// sequence ||B^k||^{1/k} is reported alongside and tightens the upper bound.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "perov/errors.hpp"

namespace perov {

/// Row-major dense square matrix.
class Matrix {
public:
    Matrix() = default;
    explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> rows) : n_(rows.size()), a_() {
        a_.reserve(n_ * n_);
        for (const auto& r : rows) {
            if (r.size() != n_) throw InvalidInput("Matrix: rows must all have length " + std::to_string(n_));
            a_.insert(a_.end(), r.begin(), r.end());
        }
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        Matrix m(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size())
                throw InvalidInput("Matrix: row " + std::to_string(i) + " has length " + std::to_string(rows[i].size()) +
                                   ", expected " + std::to_string(rows.size()));
            std::copy(rows[i].begin(), rows[i].end(), m.a_.begin() + static_cast<std::ptrdiff_t>(i * m.n_));
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t dim() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) noexcept { return a_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return a_[i * n_ + j]; }
    std::span<const double> row(std::size_t i) const noexcept { return {a_.data() + i * n_, n_}; }
    std::span<const double> data() const noexcept { return a_; }
    std::span<double> data() noexcept { return a_; }

    std::vector<std::vector<double>> rows() const {
        std::vector<std::vector<double>> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i].assign(row(i).begin(), row(i).end());
        return out;
    }

    bool all_finite() const noexcept {
        return std::all_of(a_.begin(), a_.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<double> a_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.dim() != b.dim()) throw InvalidInput("matrix product: dimension mismatch");
    const std::size_t n = a.dim();
    Matrix c(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline std::vector<double> operator*(const Matrix& a, std::span<const double> x) {
    if (a.dim() != x.size()) throw InvalidInput("matrix-vector product: dimension mismatch");
    std::vector<double> y(a.dim(), 0.0);
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double s = 0.0;
        const auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline std::vector<double> operator*(const Matrix& a, const std::vector<double>& x) {
    return a * std::span<const double>(x);
}

/// Operator norm induced by the sup norm on R^n: the largest absolute row sum.
inline double operator_sup_norm(const Matrix& a) {
    if (!a.all_finite()) throw InvalidInput("operator_sup_norm: matrix has a non-finite entry");
    double best = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        double s = 0.0;
        for (double x : a.row(i)) s += std::abs(x);
        best = std::max(best, s);
    }
    return best;
}

/// Square matrix with finite, nonnegative entries and dimension >= 1.
class NonnegativeMatrix {
public:
    explicit NonnegativeMatrix(Matrix m) : m_(std::move(m)) {
        if (m_.dim() == 0) throw InvalidInput("NonnegativeMatrix: dimension must be at least 1");
        for (std::size_t i = 0; i < m_.dim(); ++i)
            for (std::size_t j = 0; j < m_.dim(); ++j) {
                const double x = m_(i, j);
                if (!std::isfinite(x) || x < 0.0)
                    throw InvalidInput("NonnegativeMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) +
                                       ") = " + std::to_string(x) + " is not a finite nonnegative number");
            }
    }
    NonnegativeMatrix(std::initializer_list<std::initializer_list<double>> rows) : NonnegativeMatrix(Matrix(rows)) {}

    std::size_t dim() const noexcept { return m_.dim(); }
    double operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }
    const Matrix& matrix() const noexcept { return m_; }
    operator const Matrix&() const noexcept { return m_; }  // NOLINT(google-explicit-constructor)

    std::vector<double> row_sums() const {
        std::vector<double> s(dim(), 0.0);
        for (std::size_t i = 0; i < dim(); ++i)
            for (double x : m_.row(i)) s[i] += x;
        return s;
    }

    friend bool operator==(const NonnegativeMatrix&, const NonnegativeMatrix&) = default;

private:
    Matrix m_;
};

/// Finite Markov chain on {0, ..., Z-1} given by a row-stochastic matrix.
class MarkovChain {
public:
    static constexpr double row_sum_tolerance = 1e-12;

    explicit MarkovChain(Matrix p) : p_(std::move(p)) {
        for (std::size_t i = 0; i < p_.dim(); ++i) {
            const double s = p_.row_sums()[i];
            if (std::abs(s - 1.0) > row_sum_tolerance)
                throw InvalidInput("MarkovChain: row " + std::to_string(i) + " sums to " + std::to_string(s) +
                                   ", not 1");
        }
    }
    MarkovChain(std::initializer_list<std::initializer_list<double>> rows) : MarkovChain(Matrix(rows)) {}

    std::size_t size() const noexcept { return p_.dim(); }
    double operator()(std::size_t z, std::size_t zn) const noexcept { return p_(z, zn); }
    const NonnegativeMatrix& transition() const noexcept { return p_; }

private:
    NonnegativeMatrix p_;
};

struct GelfandTerm {
    std::uint64_t k = 0;
    double value = 0.0;  // ||B^k||^{1/k} in the sup-induced norm
};

struct SpectralCertificate {
    double radius = 0.0;
    std::vector<GelfandTerm> gelfand_trace;
    double lower_bound = 0.0;
    double upper_bound = 0.0;
    bool row_sum_condition_holds = false;
    /// upper_bound - lower_bound <= 2 * tolerance, so |radius - rho(B)| <= tolerance.
    bool certified = false;
    double tolerance = 0.0;
    /// Positive vector w with B w <= vector_bound * w, used for tail bounds.
    std::vector<double> positive_vector;
    double vector_bound = 0.0;

    /// Gelfand term at the given power, if it was recorded.
    const GelfandTerm* gelfand_at(std::uint64_t k) const noexcept {
        for (const auto& t : gelfand_trace)
            if (t.k == k) return &t;
        return nullptr;
    }
};

enum class RadiusVerdict { below_one, above_one, inconclusive };

inline const char* to_string(RadiusVerdict v) noexcept {
    switch (v) {
        case RadiusVerdict::below_one: return "below_one";
        case RadiusVerdict::above_one: return "above_one";
        case RadiusVerdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

/// Radius within `margin` of 1 is inconclusive, as is a bracket straddling 1.
inline RadiusVerdict classify_radius(const SpectralCertificate& cert, double margin) {
    if (std::abs(cert.radius - 1.0) <= margin) return RadiusVerdict::inconclusive;
    if (cert.upper_bound < 1.0) return RadiusVerdict::below_one;
    if (cert.lower_bound > 1.0) return RadiusVerdict::above_one;
    return RadiusVerdict::inconclusive;
}

inline RadiusVerdict classify_radius(const SpectralCertificate& cert) { return classify_radius(cert, cert.tolerance); }

struct SpectralOptions {
    /// Squarings of B for the Gelfand trace: k runs over 1, 2, 4, ..., 2^gelfand_squarings.
    int gelfand_squarings = 20;
    /// Cap on squarings of the shifted matrix that drives the Collatz-Wielandt iterate.
    int max_shift_squarings = 60;
};

namespace detail {

// Scales m to unit sup norm, returning the factor removed (0 for the zero matrix).
inline double renormalize(Matrix& m) {
    const double s = operator_sup_norm(m);
    if (s > 0.0)
        for (double& x : m.data()) x /= s;
    return s;
}

inline double cw_upper(const Matrix& b, std::span<const double> w) {
    const auto bw = b * w;
    double best = 0.0;
    for (std::size_t z = 0; z < w.size(); ++z) best = std::max(best, bw[z] / w[z]);
    return best;
}

// Lower quotient on the support {z : v_z >= cut}; valid because B v' >= alpha v'
// holds trivially off the support.
inline double cw_lower(const Matrix& b, std::span<const double> v, double cut) {
    std::vector<double> vs(v.begin(), v.end());
    for (double& x : vs)
        if (x < cut) x = 0.0;
    const auto bv = b * vs;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t z = 0; z < vs.size(); ++z)
        if (vs[z] > 0.0) best = std::min(best, bv[z] / vs[z]);
    return std::isfinite(best) ? best : 0.0;
}

}  // namespace detail

/// Certified spectral radius of a nonnegative matrix with |radius - rho(B)| <= tol
/// whenever `certified` is set.
inline SpectralCertificate spectral_radius(const NonnegativeMatrix& b, double tol = 1e-8,
                                           const SpectralOptions& opt = {}) {
    if (!(tol > 0.0) || !std::isfinite(tol)) throw InvalidInput("spectral_radius: tol must be positive");
    const std::size_t n = b.dim();
    const Matrix& bm = b.matrix();

    SpectralCertificate cert;
    cert.tolerance = tol;
    const auto sums = b.row_sums();
    cert.row_sum_condition_holds = *std::max_element(sums.begin(), sums.end()) < 1.0;

    // Gelfand trace by repeated squaring: B^k = exp(log_scale) * m with ||m|| = 1.
    {
        Matrix m = bm;
        double log_scale = std::log(detail::renormalize(m));
        bool zero = !std::isfinite(log_scale);
        std::uint64_t k = 1;
        for (int j = 0; j <= opt.gelfand_squarings; ++j) {
            const double value = zero ? 0.0 : std::exp(log_scale / static_cast<double>(k));
            if (!std::isfinite(value)) throw InternalError("spectral_radius: Gelfand term overflowed");
            cert.gelfand_trace.push_back({k, value});
            if (j == opt.gelfand_squarings) break;
            if (!zero) {
                m = m * m;
                const double s = detail::renormalize(m);
                if (!m.all_finite()) throw InternalError("spectral_radius: overflow while squaring");
                if (s == 0.0) zero = true;
                else log_scale = 2.0 * log_scale + std::log(s);
            }
            k *= 2;
        }
    }

    const double norm = operator_sup_norm(bm);
    if (norm == 0.0) {
        cert.radius = cert.lower_bound = cert.upper_bound = 0.0;
        cert.certified = true;
        cert.positive_vector.assign(n, 1.0);
        cert.vector_bound = 0.0;
        return cert;
    }

    Matrix shifted = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) shifted(i, j) += bm(i, j) / norm;
    detail::renormalize(shifted);

    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    const std::vector<double> ones(n, 1.0);
    static constexpr std::array<double, 6> floors{0.0, 1e-15, 1e-12, 1e-9, 1e-6, 1e-3};
    static constexpr std::array<double, 9> cuts{0.0, 1e-15, 1e-13, 1e-11, 1e-9, 1e-7, 1e-5, 1e-3, 1e-1};

    for (int j = 0; j <= opt.max_shift_squarings; ++j) {
        auto v = shifted * ones;
        const double vmax = *std::max_element(v.begin(), v.end());
        if (!(vmax > 0.0) || !std::isfinite(vmax)) throw InternalError("spectral_radius: degenerate iterate");
        for (double& x : v) x /= vmax;

        const bool strictly_positive = std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
        for (double f : floors) {
            if (f == 0.0 && !strictly_positive) continue;
            std::vector<double> w = v;
            for (double& x : w) x += f;
            const double ub = detail::cw_upper(bm, w);
            if (ub < upper) {
                upper = ub;
                cert.positive_vector = std::move(w);
                cert.vector_bound = ub;
            }
        }
        for (double c : cuts) lower = std::max(lower, detail::cw_lower(bm, v, c));

        const double gelfand_min =
            std::min_element(cert.gelfand_trace.begin(), cert.gelfand_trace.end(),
                             [](const GelfandTerm& a, const GelfandTerm& b2) { return a.value < b2.value; })
                ->value;
        if (std::min(upper, gelfand_min) - lower <= 2.0 * tol) break;
        if (j == opt.max_shift_squarings) break;
        shifted = shifted * shifted;
        detail::renormalize(shifted);
        if (!shifted.all_finite()) throw InternalError("spectral_radius: overflow while squaring");
    }

    for (const auto& t : cert.gelfand_trace) upper = std::min(upper, t.value);
    upper = std::max(upper, lower);
    cert.lower_bound = lower;
    cert.upper_bound = upper;
    cert.radius = 0.5 * (lower + upper);
    cert.certified = upper - lower <= 2.0 * tol;
    return cert;
}

struct UniformCondition {
    bool holds = false;
    std::vector<double> row_sums;
    double max_row_sum = 0.0;
};

/// Classical sufficient condition: every row sum of B strictly below 1.
inline UniformCondition check_uniform_condition(const NonnegativeMatrix& b) {
    UniformCondition out;
    out.row_sums = b.row_sums();
    out.max_row_sum = *std::max_element(out.row_sums.begin(), out.row_sums.end());
    out.holds = out.max_row_sum < 1.0;
    return out;
}

/// Upper approximation s of (I - B)^{-1} c = sum_k B^k c with 0 <= s - exact <= tol
/// entrywise. Requires a certificate whose positive vector w satisfies B w <= lambda w
/// with lambda < 1; the truncated tail is bounded by that vector and added back.
inline std::vector<double> neumann_apply(const NonnegativeMatrix& b, const SpectralCertificate& cert,
                                         std::span<const double> c, double tol) {
    if (!(tol > 0.0)) throw InvalidInput("neumann_apply: tol must be positive");
    if (c.size() != b.dim()) throw InvalidInput("neumann_apply: vector length does not match matrix");
    for (double x : c)
        if (!std::isfinite(x) || x < 0.0) throw InvalidInput("neumann_apply: c must be finite and nonnegative");
    const double lambda = cert.vector_bound;
    if (!(lambda < 1.0) || cert.positive_vector.size() != b.dim())
        throw PreconditionError("neumann_apply: spectral radius is not certified below 1 (bound " +
                                std::to_string(lambda) + ")");
    const auto& w = cert.positive_vector;
    const double wmax = *std::max_element(w.begin(), w.end());
    const double tail_factor = lambda / (1.0 - lambda);

    std::vector<double> s(c.begin(), c.end());
    std::vector<double> term(c.begin(), c.end());
    constexpr int max_terms = 10'000'000;
    for (int k = 0; k < max_terms; ++k) {
        double mu = 0.0;
        for (std::size_t z = 0; z < w.size(); ++z) mu = std::max(mu, term[z] / w[z]);
        if (mu * tail_factor * wmax <= tol) {
            for (std::size_t z = 0; z < w.size(); ++z) s[z] += mu * tail_factor * w[z];
            return s;
        }
        term = b.matrix() * term;
        for (std::size_t z = 0; z < s.size(); ++z) s[z] += term[z];
    }
    throw InternalError("neumann_apply: series did not reach tolerance");
}

inline std::vector<double> neumann_apply(const NonnegativeMatrix& b, std::span<const double> c, double tol) {
    return neumann_apply(b, spectral_radius(b), c, tol);
}

}  // namespace perov
