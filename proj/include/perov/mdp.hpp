#pragma once

/// Additive Markov dynamic programs on a discretized endogenous state, their Bellman
/// and weight-scaled Bellman operators, the coefficient matrix B = P o beta_tilde,
/// and a fixed-point solver whose stopping rule is the a-posteriori bound
///
///     d(v_{k+1}, v*) <= (I - B)^{-1} B d(v_k, v_{k+1})      (entrywise).
///
/// Continuation values are read off the grid by linear interpolation with constant
/// extrapolation. Interpolation weights are nonnegative and sum to one, so the
/// discretized operators are monotone and shift a constant by exactly that constant:
/// the Blackwell-type conditions hold for them without approximation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "perov/errors.hpp"
#include "perov/spectral.hpp"
#include "perov/value_function.hpp"
#include "perov/vmetric.hpp"

namespace perov {

struct AdditiveMdp {
    std::vector<double> x_grid;
    MarkovChain chain;
    Matrix discount;  // beta(z, z') >= 0
    std::function<std::vector<double>(double x, std::size_t z)> feasible;
    std::function<double(double x, std::size_t z, double a)> reward;
    std::function<double(double x, std::size_t z, std::size_t zn, double a)> transition;
};

/// An AdditiveMdp evaluated once at every grid point, feasible action, and successor state.
class TabulatedMdp {
public:
    explicit TabulatedMdp(const AdditiveMdp& m)
        : grid_(make_grid(m.x_grid)), states_(m.chain.size()), chain_(m.chain), discount_(m.discount) {
        if (discount_.dim() != states_)
            throw InvalidInput("AdditiveMdp: discount matrix is " + std::to_string(discount_.dim()) + "x" +
                               std::to_string(discount_.dim()) + ", chain has " + std::to_string(states_) + " states");
        (void)NonnegativeMatrix(discount_);
        if (!m.feasible || !m.reward || !m.transition) throw InvalidInput("AdditiveMdp: missing model function");

        const std::size_t n = grid_->size();
        offsets_.reserve(n * states_ + 1);
        offsets_.push_back(0);
        for (std::size_t z = 0; z < states_; ++z)
            for (std::size_t i = 0; i < n; ++i) {
                const double x = (*grid_)[i];
                const auto acts = m.feasible(x, z);
                if (acts.empty())
                    throw ModelError("empty action set at grid point " + std::to_string(i) + ", state " +
                                     std::to_string(z));
                for (double a : acts) {
                    const double r = m.reward(x, z, a);
                    if (!std::isfinite(r))
                        throw ModelError("non-finite reward at grid point " + std::to_string(i) + ", state " +
                                         std::to_string(z) + ", action " + std::to_string(a));
                    actions_.push_back(a);
                    rewards_.push_back(r);
                    for (std::size_t zn = 0; zn < states_; ++zn) {
                        const double xn = m.transition(x, z, zn, a);
                        if (!std::isfinite(xn))
                            throw ModelError("non-finite transition at grid point " + std::to_string(i) +
                                             ", state " + std::to_string(z));
                        next_.push_back(xn);
                        const Stencil s = locate(*grid_, xn);
                        stencils_.push_back(s);
                        // only transitions that can actually happen count as truncation
                        if (chain_(z, zn) > 0.0) {
                            if (s.clamped > 0) ++clamp_high_;
                            if (s.clamped < 0) ++clamp_low_;
                        }
                    }
                }
                offsets_.push_back(actions_.size());
            }
    }

    const GridPtr& grid() const noexcept { return grid_; }
    std::size_t points() const noexcept { return grid_->size(); }
    std::size_t states() const noexcept { return states_; }
    std::size_t nodes() const noexcept { return points() * states_; }
    const MarkovChain& chain() const noexcept { return chain_; }
    const Matrix& discount() const noexcept { return discount_; }

    /// Node j = z * points() + i owns actions [action_begin(j), action_end(j)).
    std::size_t action_begin(std::size_t node) const noexcept { return offsets_[node]; }
    std::size_t action_end(std::size_t node) const noexcept { return offsets_[node + 1]; }
    double action(std::size_t k) const noexcept { return actions_[k]; }
    double reward(std::size_t k) const noexcept { return rewards_[k]; }
    double next_state(std::size_t k, std::size_t zn) const noexcept { return next_[k * states_ + zn]; }
    const Stencil& stencil(std::size_t k, std::size_t zn) const noexcept { return stencils_[k * states_ + zn]; }

    /// Feasible transitions (P(z, z') > 0) landing above / below the grid.
    std::size_t clamp_high() const noexcept { return clamp_high_; }
    std::size_t clamp_low() const noexcept { return clamp_low_; }

private:
    GridPtr grid_;
    std::size_t states_;
    MarkovChain chain_;
    Matrix discount_;
    std::vector<std::size_t> offsets_;
    std::vector<double> actions_;
    std::vector<double> rewards_;
    std::vector<double> next_;
    std::vector<Stencil> stencils_;
    std::size_t clamp_high_ = 0;
    std::size_t clamp_low_ = 0;
};

struct ApplyOptions {
    unsigned threads = 1;
};

/// (T v)(x, z) = max_a { r(x,z,a)/kappa(x,z)
///                      + sum_z' P(z,z') beta(z,z') kappa(x',z')/kappa(x,z) v(x',z') }
/// With the unit weight this is the plain Bellman operator.
class BellmanOperator {
public:
    BellmanOperator(std::shared_ptr<const TabulatedMdp> tab, const WeightFunction& kappa)
        : tab_(std::move(tab)), weight_name_(kappa.name()) {
        const auto& t = *tab_;
        const std::size_t n = t.points();
        const std::size_t zs = t.states();
        const bool unit = kappa.is_unit();
        const ValueFunction k_grid = unit ? ValueFunction() : kappa.on_grid(t.grid(), zs);
        rewards_.resize(t.action_end(t.nodes() - 1));
        coef_.resize(rewards_.size() * zs);
        for (std::size_t z = 0; z < zs; ++z)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t node = z * n + i;
                const double kx = unit ? 1.0 : k_grid.at(i, z);
                for (std::size_t k = t.action_begin(node); k < t.action_end(node); ++k) {
                    rewards_[k] = t.reward(k) / kx;
                    for (std::size_t zn = 0; zn < zs; ++zn) {
                        const double pb = t.chain()(z, zn) * t.discount()(z, zn);
                        double c = 0.0;
                        if (pb > 0.0) {
                            const double ratio = unit ? 1.0 : kappa(t.next_state(k, zn), zn) / kx;
                            if (!std::isfinite(ratio) || ratio < 0.0)
                                throw ModelError("weight ratio is not finite and nonnegative at grid point " +
                                                 std::to_string(i) + ", state " + std::to_string(z));
                            c = pb * ratio;
                        }
                        coef_[k * zs + zn] = c;
                    }
                }
            }
        for (double r : rewards_)
            reward_bound_ = std::max(reward_bound_, std::abs(r));
        if (!std::isfinite(reward_bound_)) throw ModelError("scaled reward is unbounded on the grid");
    }

    const TabulatedMdp& model() const noexcept { return *tab_; }
    const std::string& weight_name() const noexcept { return weight_name_; }
    /// max over grid and actions of |r| / kappa
    double reward_bound() const noexcept { return reward_bound_; }

    double objective(std::size_t k, std::size_t z, const ValueFunction& v) const noexcept {
        (void)z;
        const std::size_t zs = tab_->states();
        double s = rewards_[k];
        for (std::size_t zn = 0; zn < zs; ++zn) {
            const double c = coef_[k * zs + zn];
            if (c != 0.0) s += c * v.at(tab_->stencil(k, zn), zn);
        }
        return s;
    }

    ValueFunction apply(const ValueFunction& v, const ApplyOptions& opt = {},
                        std::vector<std::size_t>* argmax = nullptr) const {
        check(v);
        const std::size_t nodes = tab_->nodes();
        std::vector<double> out(nodes);
        if (argmax) argmax->assign(nodes, 0);
        auto work = [&](std::size_t begin, std::size_t end) {
            for (std::size_t node = begin; node < end; ++node) {
                const std::size_t z = node / tab_->points();
                std::size_t best_k = tab_->action_begin(node);
                double best = objective(best_k, z, v);
                for (std::size_t k = best_k + 1; k < tab_->action_end(node); ++k) {
                    const double val = objective(k, z, v);
                    if (val > best) {  // ties keep the smallest action index
                        best = val;
                        best_k = k;
                    }
                }
                out[node] = best;
                if (argmax) (*argmax)[node] = best_k;
            }
        };
        const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(nodes)));
        if (threads == 1) {
            work(0, nodes);
        } else {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (nodes + threads - 1) / threads;
            for (unsigned t = 0; t < threads; ++t) {
                const std::size_t b = t * chunk;
                const std::size_t e = std::min(nodes, b + chunk);
                if (b < e) pool.emplace_back(work, b, e);
            }
        }
        return ValueFunction(tab_->grid(), tab_->states(), std::move(out));
    }

    /// Action index (into the tabulation) attaining the max at every node.
    std::vector<std::size_t> greedy(const ValueFunction& v, const ApplyOptions& opt = {}) const {
        std::vector<std::size_t> idx;
        (void)apply(v, opt, &idx);
        return idx;
    }

private:
    void check(const ValueFunction& v) const {
        if (v.points() != tab_->points() || v.states() != tab_->states() ||
            (v.grid_ptr() != tab_->grid() && *v.grid_ptr() != *tab_->grid()))
            throw InvalidInput("Bellman operator: value function is not on the model grid");
    }

    std::shared_ptr<const TabulatedMdp> tab_;
    std::string weight_name_;
    std::vector<double> rewards_;
    std::vector<double> coef_;  // P(z,z') beta(z,z') kappa(x',z') / kappa(x,z), per (action, z')
    double reward_bound_ = 0.0;
};

inline ValueFunction bellman_apply(const AdditiveMdp& mdp, const ValueFunction& v, const ApplyOptions& opt = {}) {
    return BellmanOperator(std::make_shared<const TabulatedMdp>(mdp), WeightFunction::unit()).apply(v, opt);
}

inline ValueFunction scaled_bellman_apply(const AdditiveMdp& mdp, const WeightFunction& kappa,
                                          const ValueFunction& v_scaled, const ApplyOptions& opt = {}) {
    return BellmanOperator(std::make_shared<const TabulatedMdp>(mdp), kappa).apply(v_scaled, opt);
}

/// beta_tilde(z, z') = beta(z, z') * max over grid x and feasible a of kappa(g(x,z,z',a), z') / kappa(x, z).
/// The ratio uses the unclamped successor state.
inline Matrix compute_tilde_beta(const TabulatedMdp& t, const WeightFunction& kappa) {
    const std::size_t n = t.points();
    const std::size_t zs = t.states();
    const ValueFunction k_grid = kappa.on_grid(t.grid(), zs);
    Matrix out(zs);
    for (std::size_t z = 0; z < zs; ++z)
        for (std::size_t zn = 0; zn < zs; ++zn) {
            const double beta = t.discount()(z, zn);
            if (beta == 0.0) continue;
            double worst = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t node = z * n + i;
                for (std::size_t k = t.action_begin(node); k < t.action_end(node); ++k)
                    worst = std::max(worst, kappa(t.next_state(k, zn), zn) / k_grid.at(i, z));
            }
            if (!std::isfinite(worst)) throw ModelError("compute_tilde_beta: weight ratio is unbounded");
            out(z, zn) = beta * worst;
        }
    return out;
}

inline Matrix compute_tilde_beta(const AdditiveMdp& mdp, const WeightFunction& kappa) {
    return compute_tilde_beta(TabulatedMdp(mdp), kappa);
}

/// B(z, z') = P(z, z') * beta_tilde(z, z')
inline NonnegativeMatrix build_B(const MarkovChain& chain, const Matrix& tilde_beta) {
    if (tilde_beta.dim() != chain.size())
        throw InvalidInput("build_B: beta_tilde is " + std::to_string(tilde_beta.dim()) + "x" +
                           std::to_string(tilde_beta.dim()) + ", chain has " + std::to_string(chain.size()) +
                           " states");
    Matrix b(chain.size());
    for (std::size_t z = 0; z < chain.size(); ++z)
        for (std::size_t zn = 0; zn < chain.size(); ++zn) b(z, zn) = chain(z, zn) * tilde_beta(z, zn);
    return NonnegativeMatrix(std::move(b));
}

namespace detail {

// Platform-independent uniform draw in [0, 1) from the raw 64-bit engine output.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline ValueFunction random_function(const GridPtr& grid, std::size_t states, std::mt19937_64& rng, double lo,
                                     double hi) {
    std::vector<double> v(grid->size() * states);
    for (double& x : v) x = lo + (hi - lo) * unit_uniform(rng);
    return ValueFunction(grid, states, std::move(v));
}

}  // namespace detail

struct BlackwellReport {
    std::size_t samples = 0;
    /// max over samples and nodes of (T u - T v)_+ with u <= v
    double monotonicity_violation = 0.0;
    /// max over samples and nodes of (T(v + c) - T v - B c)_+ with c >= 0
    double discounting_violation = 0.0;
};

/// Random checks of monotonicity and discounting for the scaled operator.
inline BlackwellReport verify_blackwell(const BellmanOperator& op, const NonnegativeMatrix& b,
                                        std::size_t sample_count, std::uint64_t seed, double scale = 10.0) {
    const auto& t = op.model();
    std::mt19937_64 rng(seed);
    BlackwellReport rep;
    rep.samples = sample_count;
    const std::size_t n = t.points();
    for (std::size_t s = 0; s < sample_count; ++s) {
        const auto v = detail::random_function(t.grid(), t.states(), rng, -scale, scale);
        auto gap = detail::random_function(t.grid(), t.states(), rng, 0.0, scale);
        std::vector<double> u(v.values().begin(), v.values().end());
        for (std::size_t j = 0; j < u.size(); ++j) u[j] -= gap.values()[j];
        const ValueFunction uf(t.grid(), t.states(), std::move(u));
        std::vector<double> c(t.states());
        for (double& x : c) x = scale * detail::unit_uniform(rng);

        const auto tv = op.apply(v);
        const auto tu = op.apply(uf);
        const auto tvc = op.apply(shift(v, c));
        const auto bc = b.matrix() * c;
        for (std::size_t z = 0; z < t.states(); ++z)
            for (std::size_t i = 0; i < n; ++i) {
                rep.monotonicity_violation = std::max(rep.monotonicity_violation, tu.at(i, z) - tv.at(i, z));
                rep.discounting_violation =
                    std::max(rep.discounting_violation, tvc.at(i, z) - tv.at(i, z) - bc[z]);
            }
    }
    return rep;
}

inline BlackwellReport verify_blackwell(const AdditiveMdp& mdp, const WeightFunction& kappa,
                                        std::size_t sample_count, std::uint64_t seed) {
    auto tab = std::make_shared<const TabulatedMdp>(mdp);
    const auto b = build_B(mdp.chain, compute_tilde_beta(*tab, kappa));
    return verify_blackwell(BellmanOperator(tab, kappa), b, sample_count, seed);
}

struct PerovReport {
    std::size_t samples = 0;
    /// max over samples and states of d(Tv1, Tv2) - (B d(v1, v2))
    double max_excess = -std::numeric_limits<double>::infinity();
    std::size_t violations = 0;  // samples with excess above the tolerance
    double tolerance = 1e-10;
};

/// Random checks of d(T v1, T v2) <= B d(v1, v2) in unweighted per-state sup distance.
inline PerovReport verify_perov_inequality(const BellmanOperator& op, const NonnegativeMatrix& b,
                                           std::size_t sample_count, std::uint64_t seed, double tolerance = 1e-10,
                                           double scale = 10.0) {
    const auto& t = op.model();
    std::mt19937_64 rng(seed);
    PerovReport rep;
    rep.samples = sample_count;
    rep.tolerance = tolerance;
    for (std::size_t s = 0; s < sample_count; ++s) {
        const auto v1 = detail::random_function(t.grid(), t.states(), rng, -scale, scale);
        const auto v2 = detail::random_function(t.grid(), t.states(), rng, -scale, scale);
        const auto lhs = vector_distance(op.apply(v1), op.apply(v2));
        const auto rhs = b.matrix() * vector_distance(v1, v2).vec();
        double excess = -std::numeric_limits<double>::infinity();
        for (std::size_t z = 0; z < t.states(); ++z) excess = std::max(excess, lhs[z] - rhs[z]);
        rep.max_excess = std::max(rep.max_excess, excess);
        if (excess > tolerance) ++rep.violations;
    }
    return rep;
}

inline PerovReport verify_perov_inequality(const AdditiveMdp& mdp, const WeightFunction& kappa,
                                           const NonnegativeMatrix& b, std::size_t sample_count, std::uint64_t seed) {
    return verify_perov_inequality(BellmanOperator(std::make_shared<const TabulatedMdp>(mdp), kappa), b,
                                   sample_count, seed);
}

/// Refusal to iterate: the coefficient matrix is not certified to have radius below 1.
class SpectralRefusal : public std::runtime_error {
public:
    SpectralRefusal(const std::string& what, SpectralCertificate cert)
        : std::runtime_error(what), certificate(std::move(cert)) {}
    SpectralCertificate certificate;
};

struct SolveOptions {
    double tol = 1e-8;
    std::size_t max_iter = 100000;
    double spectral_tol = 1e-8;
    unsigned threads = 1;
};

struct SolveReport {
    std::size_t iterations = 0;
    std::vector<VectorDistance> distance_trace;  // d(v_k, v_{k+1}), k = 0, 1, ...
    std::optional<double> fitted_rate;           // LS slope of log sup distance, last half of the trace
    std::vector<double> aposteriori_bound;       // (I - B)^{-1} B d(v_k, v_{k+1}) at the last step
    Matrix tilde_beta;
    NonnegativeMatrix B;
    SpectralCertificate certificate;
    bool converged = false;
    double tol = 0.0;
    double reward_bound = 0.0;
    std::size_t clamp_high = 0;
    std::size_t clamp_low = 0;
    bool weight_ratio_monotone = true;
    double seconds = 0.0;
};

struct SolveResult {
    SolveReport report;
    ValueFunction last_iterate;           // scaled
    std::optional<ValueFunction> scaled;  // fixed point of the scaled operator, when converged
    std::optional<ValueFunction> value;   // kappa * scaled
};

/// Least-squares slope of log(sup d_k) against k over the second half of the trace.
inline std::optional<double> fit_log_rate(const std::vector<VectorDistance>& trace) {
    std::vector<double> xs, ys;
    for (std::size_t k = trace.size() / 2; k < trace.size(); ++k) {
        const double d = sup_collapse(trace[k]);
        if (d > 0.0) {
            xs.push_back(static_cast<double>(k + 1));
            ys.push_back(std::log(d));
        }
    }
    if (xs.size() < 2) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
        mx += xs[j];
        my += ys[j];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
        sxy += (xs[j] - mx) * (ys[j] - my);
        sxx += (xs[j] - mx) * (xs[j] - mx);
    }
    return sxy / sxx;
}

/// Iterates the scaled operator from v0 until the a-posteriori bound is within tol.
inline SolveResult perov_solve(std::shared_ptr<const TabulatedMdp> tab, const WeightFunction& kappa,
                               const ValueFunction& v0, const SolveOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw InvalidInput("perov_solve: tol must be positive");
    const auto started = std::chrono::steady_clock::now();
    const BellmanOperator op(tab, kappa);
    auto tilde_beta = compute_tilde_beta(*tab, kappa);
    auto b = build_B(tab->chain(), tilde_beta);
    auto cert = spectral_radius(b, opt.spectral_tol);
    if (classify_radius(cert, opt.spectral_tol) != RadiusVerdict::below_one)
        throw SpectralRefusal("perov_solve: spectral radius of B is not certified below 1 (radius " +
                                  std::to_string(cert.radius) + ", bracket [" + std::to_string(cert.lower_bound) +
                                  ", " + std::to_string(cert.upper_bound) + "])",
                              cert);

    SolveResult res{
        .report = SolveReport{.tilde_beta = std::move(tilde_beta),
                              .B = std::move(b),
                              .certificate = std::move(cert),
                              .tol = opt.tol,
                              .reward_bound = op.reward_bound(),
                              .clamp_high = tab->clamp_high(),
                              .clamp_low = tab->clamp_low(),
                              .weight_ratio_monotone = kappa.ratio_monotone()},
        .last_iterate = v0,
        .scaled = std::nullopt,
        .value = std::nullopt,
    };
    auto& rep = res.report;
    const ApplyOptions apply_opt{opt.threads};
    // Neumann tail is summed well below the stopping tolerance.
    const double series_tol = opt.tol * 1e-3;

    ValueFunction cur = v0;
    for (std::size_t k = 0; k < opt.max_iter; ++k) {
        ValueFunction next = op.apply(cur, apply_opt);
        auto d = vector_distance(cur, next);
        const auto bd = rep.B.matrix() * d.vec();
        auto bound = neumann_apply(rep.B, rep.certificate, bd, series_tol);
        rep.distance_trace.push_back(std::move(d));
        rep.iterations = k + 1;
        rep.aposteriori_bound = std::move(bound);
        cur = std::move(next);
        if (*std::max_element(rep.aposteriori_bound.begin(), rep.aposteriori_bound.end()) <= opt.tol) {
            rep.converged = true;
            break;
        }
    }
    rep.fitted_rate = fit_log_rate(rep.distance_trace);
    res.last_iterate = cur;
    if (rep.converged) {
        res.value = multiply(kappa, cur);
        res.scaled = std::move(cur);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return res;
}

inline SolveResult perov_solve(const AdditiveMdp& mdp, const WeightFunction& kappa, const ValueFunction& v0,
                               const SolveOptions& opt = {}) {
    return perov_solve(std::make_shared<const TabulatedMdp>(mdp), kappa, v0, opt);
}

inline SolveResult perov_solve(const AdditiveMdp& mdp, const WeightFunction& kappa, const SolveOptions& opt = {}) {
    auto tab = std::make_shared<const TabulatedMdp>(mdp);
    auto v0 = ValueFunction::zeros(tab->grid(), tab->states());
    return perov_solve(std::move(tab), kappa, v0, opt);
}

struct Policy {
    std::vector<double> actions;      // per node z * points + i
    std::vector<std::size_t> index;   // position within the feasible set at that node

    double at(std::size_t i, std::size_t z, std::size_t points) const { return actions[z * points + i]; }
};

inline Policy extract_policy(const BellmanOperator& op, const ValueFunction& v, const ApplyOptions& opt = {}) {
    const auto& t = op.model();
    const auto idx = op.greedy(v, opt);
    Policy p;
    p.actions.resize(idx.size());
    p.index.resize(idx.size());
    for (std::size_t node = 0; node < idx.size(); ++node) {
        p.actions[node] = t.action(idx[node]);
        p.index[node] = idx[node] - t.action_begin(node);
    }
    return p;
}

/// Greedy policy for the unscaled Bellman operator at v.
inline Policy extract_policy(const AdditiveMdp& mdp, const ValueFunction& v) {
    return extract_policy(BellmanOperator(std::make_shared<const TabulatedMdp>(mdp), WeightFunction::unit()), v);
}

/// Greedy policy for the scaled operator at the scaled function v_scaled.
inline Policy extract_policy(const AdditiveMdp& mdp, const WeightFunction& kappa, const ValueFunction& v_scaled) {
    return extract_policy(BellmanOperator(std::make_shared<const TabulatedMdp>(mdp), kappa), v_scaled);
}

}  // namespace perov
