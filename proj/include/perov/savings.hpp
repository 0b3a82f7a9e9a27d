#pragma once

/// Optimal savings with a finite Markov state:
///
///     v(w, z) = max_{0 <= c <= w} { u(c) + E_z[ beta(z,z') v(R(z,z')(w - c) + y(z'), z') ] }
///
/// Consumption is chosen as a share of wealth on a fixed grid, so the feasible set
/// scales with w. Includes the two coefficient-matrix formulas (general concave
/// utility with weight w + b, CRRA with weight w^{1-gamma}), the choice of offset b,
/// a homogeneity-based solution for CRRA with zero income, the value of the
/// save-then-consume-everything plan, and a convergent/divergent classification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "perov/errors.hpp"
#include "perov/mdp.hpp"
#include "perov/spectral.hpp"
#include "perov/value_function.hpp"

namespace perov::savings {

/// u(c) = c^{1-gamma} / (1 - gamma), 0 < gamma < 1
struct CrraUtility {
    double gamma = 0.5;
};

/// Increasing concave utility given by points (c_i, u_i) with c_0 = 0; linear in between
/// and extended past the last point with the last slope.
struct TabulatedUtility {
    std::vector<double> c;
    std::vector<double> u;
};

using Utility = std::variant<CrraUtility, TabulatedUtility>;

inline double evaluate(const Utility& u, double c) {
    if (const auto* crra = std::get_if<CrraUtility>(&u)) {
        const double p = 1.0 - crra->gamma;
        return c > 0.0 ? std::pow(c, p) / p : 0.0;
    }
    const auto& t = std::get<TabulatedUtility>(u);
    const std::size_t n = t.c.size();
    if (n == 1) return t.u[0];
    if (c >= t.c[n - 1]) {
        const double slope = (t.u[n - 1] - t.u[n - 2]) / (t.c[n - 1] - t.c[n - 2]);
        return t.u[n - 1] + slope * (c - t.c[n - 1]);
    }
    const Stencil s = locate(t.c, c);
    return s.weight_hi == 0.0 ? t.u[s.lo] : (1.0 - s.weight_hi) * t.u[s.lo] + s.weight_hi * t.u[s.lo + 1];
}

inline std::optional<double> crra_gamma(const Utility& u) {
    if (const auto* crra = std::get_if<CrraUtility>(&u)) return crra->gamma;
    return std::nullopt;
}

struct SavingsParams {
    MarkovChain chain;
    Matrix R;                    // gross return on savings, state pair (z, z')
    std::vector<double> y;       // non-financial income received in z'
    Matrix discount;             // beta(z, z')
    Utility utility;
    std::vector<double> w_grid;  // strictly increasing, >= 0
    std::vector<double> shares;  // consumption shares in [0, 1], strictly increasing

    std::size_t states() const noexcept { return chain.size(); }
    bool zero_income() const noexcept {
        return std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; });
    }
};

inline std::vector<double> default_shares(std::size_t n = 101) { return uniform_grid(0.0, 1.0, n); }
inline std::vector<double> default_wealth_grid() { return geometric_grid(1e-3, 1e3, 300); }

inline void validate(const SavingsParams& p) {
    const std::size_t zs = p.states();
    if (p.R.dim() != zs) throw InvalidInput("savings: R must be " + std::to_string(zs) + "x" + std::to_string(zs));
    if (p.discount.dim() != zs)
        throw InvalidInput("savings: discount must be " + std::to_string(zs) + "x" + std::to_string(zs));
    if (p.y.size() != zs) throw InvalidInput("savings: y must have " + std::to_string(zs) + " entries");
    (void)NonnegativeMatrix(p.R);
    (void)NonnegativeMatrix(p.discount);
    for (std::size_t z = 0; z < zs; ++z)
        if (!std::isfinite(p.y[z]) || p.y[z] < 0.0)
            throw InvalidInput("savings: y[" + std::to_string(z) + "] must be finite and >= 0");

    if (const auto g = crra_gamma(p.utility)) {
        if (!(*g > 0.0 && *g < 1.0)) throw InvalidInput("savings: CRRA gamma must lie in (0, 1)");
    } else {
        const auto& t = std::get<TabulatedUtility>(p.utility);
        if (t.c.size() < 2 || t.c.size() != t.u.size())
            throw InvalidInput("savings: tabulated utility needs at least two (c, u) points of equal count");
        if (t.c.front() != 0.0) throw InvalidInput("savings: tabulated utility must start at c = 0");
        for (std::size_t i = 0; i < t.c.size(); ++i)
            if (!std::isfinite(t.c[i]) || !std::isfinite(t.u[i]))
                throw InvalidInput("savings: tabulated utility must be finite (u(0) > -inf)");
        double prev_slope = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < t.c.size(); ++i) {
            if (!(t.c[i] > t.c[i - 1])) throw InvalidInput("savings: utility abscissae must be strictly increasing");
            const double slope = (t.u[i] - t.u[i - 1]) / (t.c[i] - t.c[i - 1]);
            if (!(slope > 0.0))
                throw InvalidInput("savings: utility must be increasing (segment " + std::to_string(i) + ")");
            if (slope > prev_slope * (1.0 + 1e-12))
                throw InvalidInput("savings: utility must be concave (segment " + std::to_string(i) + ")");
            prev_slope = slope;
        }
    }

    (void)make_grid(p.w_grid);
    if (p.w_grid.front() < 0.0) throw InvalidInput("savings: wealth grid must be nonnegative");
    (void)make_grid(p.shares);
    if (p.shares.front() < 0.0 || p.shares.back() > 1.0)
        throw InvalidInput("savings: consumption shares must lie in [0, 1]");
}

/// Shift applied to utility so that u(0) = 0.
inline double utility_shift(const Utility& u) { return evaluate(u, 0.0); }

/// Reward u(c) - u(0), feasible set {share * w}, and w' = R(z,z')(w - c) + y(z').
inline AdditiveMdp build_savings_mdp(const SavingsParams& p) {
    validate(p);
    const double u0 = utility_shift(p.utility);
    return AdditiveMdp{
        .x_grid = p.w_grid,
        .chain = p.chain,
        .discount = p.discount,
        .feasible =
            [shares = p.shares](double w, std::size_t) {
                std::vector<double> c(shares.size());
                for (std::size_t k = 0; k < shares.size(); ++k) c[k] = shares[k] * w;
                return c;
            },
        .reward = [u = p.utility, u0](double, std::size_t, double c) { return evaluate(u, c) - u0; },
        .transition = [R = p.R, y = p.y](double w, std::size_t z, std::size_t zn,
                                         double c) { return R(z, zn) * (w - c) + y[zn]; },
    };
}

/// B(z, z') = P(z, z') beta(z, z') max{1, R(z, z')}
inline NonnegativeMatrix savings_B_general(const SavingsParams& p) {
    const std::size_t zs = p.states();
    Matrix b(zs);
    for (std::size_t z = 0; z < zs; ++z)
        for (std::size_t zn = 0; zn < zs; ++zn)
            b(z, zn) = p.chain(z, zn) * p.discount(z, zn) * std::max(1.0, p.R(z, zn));
    return NonnegativeMatrix(std::move(b));
}

/// Zero income: B = P beta R^{1-gamma}. Positive income: B = P beta max{1, R^{1-gamma}},
/// matching the weight (w + b)^{1-gamma}.
inline NonnegativeMatrix savings_B_crra(const SavingsParams& p, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("savings_B_crra: gamma must lie in (0, 1)");
    const std::size_t zs = p.states();
    const bool zero_income = p.zero_income();
    Matrix b(zs);
    for (std::size_t z = 0; z < zs; ++z)
        for (std::size_t zn = 0; zn < zs; ++zn) {
            const double g = std::pow(p.R(z, zn), 1.0 - gamma);
            b(z, zn) = p.chain(z, zn) * p.discount(z, zn) * (zero_income ? g : std::max(1.0, g));
        }
    return NonnegativeMatrix(std::move(b));
}

struct WeightChoice {
    double offset = 1.0;  // b
    double exponent = 1.0;
    WeightFunction kappa;
    Matrix tilde_beta;  // beta (max{1, R} + y / b)^exponent
    SpectralCertificate certificate;  // for P o tilde_beta
    std::size_t doublings = 0;
};

/// Doubles b from 1 until P o beta (max{1,R} + y/b)^exponent has radius below
/// 1 - target_margin / 2. The limit matrix as b grows must sit below 1 - target_margin.
inline WeightChoice choose_weight_offset(const SavingsParams& p, double target_margin, double exponent = 1.0) {
    validate(p);
    if (!(target_margin > 0.0 && target_margin < 1.0))
        throw InvalidInput("choose_weight_offset: target_margin must lie in (0, 1)");
    if (!(exponent > 0.0 && exponent <= 1.0)) throw InvalidInput("choose_weight_offset: exponent must lie in (0, 1]");
    const std::size_t zs = p.states();

    auto tilde = [&](double b) {
        Matrix t(zs);
        for (std::size_t z = 0; z < zs; ++z)
            for (std::size_t zn = 0; zn < zs; ++zn)
                t(z, zn) = p.discount(z, zn) * std::pow(std::max(1.0, p.R(z, zn)) + p.y[zn] / b, exponent);
        return t;
    };

    Matrix limit(zs);
    for (std::size_t z = 0; z < zs; ++z)
        for (std::size_t zn = 0; zn < zs; ++zn)
            limit(z, zn) = p.chain(z, zn) * p.discount(z, zn) * std::pow(std::max(1.0, p.R(z, zn)), exponent);
    const auto limit_cert = spectral_radius(NonnegativeMatrix(limit));
    if (!(limit_cert.upper_bound < 1.0 - target_margin))
        throw PreconditionError("choose_weight_offset: cannot certify a weight; radius of the limiting "
                                "coefficient matrix is " +
                                std::to_string(limit_cert.radius) + ", needs to be below " +
                                std::to_string(1.0 - target_margin));

    constexpr std::size_t max_doublings = 200;
    double b = 1.0;
    for (std::size_t d = 0; d <= max_doublings; ++d, b *= 2.0) {
        Matrix t = tilde(b);
        auto cert = spectral_radius(build_B(p.chain, t));
        if (cert.upper_bound < 1.0 - 0.5 * target_margin) {
            WeightChoice out{
                .offset = b,
                .exponent = exponent,
                .kappa = exponent == 1.0 ? WeightFunction::affine(b) : WeightFunction::power_affine(b, exponent),
                .tilde_beta = std::move(t),
                .certificate = std::move(cert),
                .doublings = d,
            };
            return out;
        }
    }
    throw InternalError("choose_weight_offset: no offset found although the limit matrix qualifies");
}

struct OracleResult {
    std::vector<double> h;     // v(w, z) = h(z) w^{1-gamma} / (1 - gamma)
    std::vector<double> theta;  // maximizing consumption share per state
    double residual = 0.0;     // sup |F(h) - h|
    std::size_t iterations = 0;
    SpectralCertificate certificate;
};

namespace detail {

// max over theta in [0, 1] of theta^p + (1 - theta)^p q, for a concave objective.
inline std::pair<double, double> best_share_continuous(double p, double q) {
    auto f = [p, q](double t) { return std::pow(t, p) + std::pow(1.0 - t, p) * q; };
    if (q <= 0.0) return {1.0, 1.0};
    constexpr std::size_t coarse = 1000;
    std::size_t best = 0;
    double best_val = f(0.0);
    for (std::size_t k = 1; k <= coarse; ++k) {
        const double val = f(static_cast<double>(k) / coarse);
        if (val > best_val) {
            best_val = val;
            best = k;
        }
    }
    double lo = best == 0 ? 0.0 : static_cast<double>(best - 1) / coarse;
    double hi = best == coarse ? 1.0 : static_cast<double>(best + 1) / coarse;
    // derivative p t^{p-1} - p (1-t)^{p-1} q is decreasing in t
    auto slope_sign = [p, q](double t) { return std::pow(t, p - 1.0) - std::pow(1.0 - t, p - 1.0) * q; };
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (slope_sign(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    const double t = 0.5 * (lo + hi);
    const double val = f(t);
    return val >= best_val ? std::pair{t, val} : std::pair{static_cast<double>(best) / coarse, best_val};
}

inline std::pair<double, double> best_share_discrete(double p, double q, const std::vector<double>& shares) {
    double best_t = shares.front();
    double best = -std::numeric_limits<double>::infinity();
    for (double t : shares) {
        const double val = std::pow(t, p) + std::pow(1.0 - t, p) * q;
        if (val > best) {
            best = val;
            best_t = t;
        }
    }
    return {best_t, best};
}

}  // namespace detail

/// Solves h(z) = max_theta { theta^{1-gamma} + (1-theta)^{1-gamma} (B h)(z) } with
/// B = P beta R^{1-gamma}, by iteration from h = 1. With `shares` the max runs over that
/// grid (to match a discretized solver); otherwise over [0, 1].
inline OracleResult crra_zero_income_oracle(const SavingsParams& p, double gamma, double tol,
                                            const std::optional<std::vector<double>>& shares = std::nullopt) {
    if (!p.zero_income()) throw PreconditionError("crra_zero_income_oracle: requires zero non-financial income");
    if (!(tol > 0.0)) throw InvalidInput("crra_zero_income_oracle: tol must be positive");
    const auto b = savings_B_crra(p, gamma);
    OracleResult out;
    out.certificate = spectral_radius(b);
    if (classify_radius(out.certificate) != RadiusVerdict::below_one)
        throw PreconditionError("crra_zero_income_oracle: radius of B is not below 1 (" +
                                std::to_string(out.certificate.radius) + "); the optimal value is not finite");
    const double pw = 1.0 - gamma;
    const std::size_t zs = p.states();

    auto step = [&](const std::vector<double>& h, std::vector<double>* theta) {
        const auto q = b.matrix() * h;
        std::vector<double> next(zs);
        for (std::size_t z = 0; z < zs; ++z) {
            const auto [t, val] =
                shares ? detail::best_share_discrete(pw, q[z], *shares) : detail::best_share_continuous(pw, q[z]);
            next[z] = val;
            if (theta) (*theta)[z] = t;
        }
        return next;
    };
    auto sup_diff = [](const std::vector<double>& a, const std::vector<double>& c) {
        double m = 0.0;
        for (std::size_t z = 0; z < a.size(); ++z) m = std::max(m, std::abs(a[z] - c[z]));
        return m;
    };

    std::vector<double> h(zs, 1.0);
    constexpr std::size_t max_iter = 10'000'000;
    for (std::size_t it = 0; it < max_iter; ++it) {
        auto next = step(h, nullptr);
        const double diff = sup_diff(next, h);
        h = std::move(next);
        out.iterations = it + 1;
        if (diff <= tol * 1e-3) break;
    }
    out.theta.assign(zs, 0.0);
    const auto again = step(h, &out.theta);
    out.residual = sup_diff(again, h);
    if (out.residual > tol) throw InternalError("crra_zero_income_oracle: residual above tolerance");
    out.h = std::move(h);
    return out;
}

/// log a_t(z) for t = 0..horizon, a_0 = 1, a_t = B a_{t-1}; -inf where a_t(z) = 0.
inline std::vector<std::vector<double>> plan_log_coefficients(const NonnegativeMatrix& b, std::size_t horizon) {
    const std::size_t zs = b.dim();
    std::vector<std::vector<double>> out;
    out.reserve(horizon + 1);
    std::vector<double> a(zs, 1.0);
    double log_scale = 0.0;
    auto record = [&] {
        std::vector<double> row(zs);
        for (std::size_t z = 0; z < zs; ++z)
            row[z] = a[z] > 0.0 ? std::log(a[z]) + log_scale : -std::numeric_limits<double>::infinity();
        out.push_back(std::move(row));
    };
    record();
    for (std::size_t t = 1; t <= horizon; ++t) {
        a = b.matrix() * a;
        const double m = *std::max_element(a.begin(), a.end());
        if (m > 0.0) {
            for (double& x : a) x /= m;
            log_scale += std::log(m);
        }
        record();
    }
    return out;
}

/// Lifetime utility of saving everything until T and consuming all wealth at T:
/// (e_z' B^T 1) w^{1-gamma} / (1 - gamma), zero income, B = P beta R^{1-gamma}.
inline double plan_value_vT(const SavingsParams& p, double gamma, long long T, double w, std::size_t z) {
    if (T < 0) throw InvalidInput("plan_value_vT: T must be >= 0");
    if (!(w > 0.0)) throw InvalidInput("plan_value_vT: w must be positive");
    if (z >= p.states()) throw InvalidInput("plan_value_vT: state index out of range");
    if (!p.zero_income()) throw PreconditionError("plan_value_vT: requires zero non-financial income");
    const auto logs = plan_log_coefficients(savings_B_crra(p, gamma), static_cast<std::size_t>(T));
    const double pw = 1.0 - gamma;
    return std::exp(logs.back()[z]) * std::pow(w, pw) / pw;
}

enum class ProblemClass { convergent, divergent, inconclusive };

inline const char* to_string(ProblemClass c) noexcept {
    switch (c) {
        case ProblemClass::convergent: return "Convergent";
        case ProblemClass::divergent: return "Divergent";
        case ProblemClass::inconclusive: return "Inconclusive";
    }
    return "Inconclusive";
}

struct ClassifyOptions {
    double spectral_tol = 1e-8;
    double inconclusive_margin = 1e-6;
    std::size_t horizon = 200;
};

struct Classification {
    ProblemClass verdict = ProblemClass::inconclusive;
    std::string matrix_kind;  // "general" or "crra"
    NonnegativeMatrix B;
    SpectralCertificate certificate;
    UniformCondition uniform;
    std::string reason;
    /// (v_T(1, z))^{1/T} at T = horizon, divergent case only.
    std::vector<double> growth_exponents;
    double growth_exponent = 0.0;
    std::size_t horizon = 0;
};

/// Convergent when the relevant B has radius certified below 1. Divergent only for CRRA
/// with zero income and radius certified above 1, where the save-then-consume plan values grow
/// without bound.
inline Classification classify_problem(const SavingsParams& p, std::optional<double> gamma,
                                       const ClassifyOptions& opt = {}) {
    validate(p);
    const bool crra = gamma.has_value();
    auto b = crra ? savings_B_crra(p, *gamma) : savings_B_general(p);
    auto cert = spectral_radius(b, opt.spectral_tol);
    Classification out{
        .verdict = ProblemClass::inconclusive,
        .matrix_kind = crra ? "crra" : "general",
        .B = b,
        .certificate = cert,
        .uniform = check_uniform_condition(b),
    };
    switch (classify_radius(cert, opt.inconclusive_margin)) {
        case RadiusVerdict::below_one:
            out.verdict = ProblemClass::convergent;
            out.reason = "spectral radius certified below 1";
            break;
        case RadiusVerdict::inconclusive:
            out.reason = "spectral radius within margin of 1 or not certified";
            break;
        case RadiusVerdict::above_one:
            if (crra && p.zero_income()) {
                out.verdict = ProblemClass::divergent;
                out.reason = "spectral radius certified above 1; plan values grow without bound";
                const auto logs = plan_log_coefficients(b, opt.horizon);
                const double t = static_cast<double>(opt.horizon);
                out.horizon = opt.horizon;
                out.growth_exponents.resize(p.states());
                for (std::size_t z = 0; z < p.states(); ++z)
                    out.growth_exponents[z] = std::exp((logs.back()[z] - std::log(1.0 - *gamma)) / t);
                out.growth_exponent = *std::max_element(out.growth_exponents.begin(), out.growth_exponents.end());
            } else {
                out.reason = "spectral radius above 1, but divergence is only established for CRRA utility "
                             "with zero income";
            }
            break;
    }
    return out;
}

inline Classification classify_problem(const SavingsParams& p, const ClassifyOptions& opt = {}) {
    return classify_problem(p, crra_gamma(p.utility), opt);
}

/// Weight used by default when solving: w^{1-gamma} for CRRA with zero income, otherwise
/// (w + b)^{1-gamma} or w + b with b from choose_weight_offset.
struct DefaultWeight {
    WeightFunction kappa;
    std::string kind;  // "power", "power-affine", "affine"
    double offset = 0.0;
    double exponent = 1.0;
};

inline DefaultWeight default_weight(const SavingsParams& p, double target_margin = 1e-3) {
    if (const auto g = crra_gamma(p.utility)) {
        if (p.zero_income() && p.w_grid.front() > 0.0)
            return {WeightFunction::power(1.0 - *g), "power", 0.0, 1.0 - *g};
        auto c = choose_weight_offset(p, target_margin, 1.0 - *g);
        return {c.kappa, "power-affine", c.offset, c.exponent};
    }
    auto c = choose_weight_offset(p, target_margin, 1.0);
    return {c.kappa, "affine", c.offset, 1.0};
}

}  // namespace perov::savings
