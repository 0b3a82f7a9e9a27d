#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "perov/savings.hpp"

using namespace perov;
using namespace perov::savings;

namespace {

SavingsParams crra_two_state(double gamma = 0.5) {
    return SavingsParams{
        .chain = MarkovChain{{0.9, 0.1}, {0.3, 0.7}},
        .R = Matrix{{1.10, 0.95}, {1.10, 0.95}},
        .y = {0.0, 0.0},
        .discount = Matrix{{0.87, 0.87}, {0.87, 0.87}},
        .utility = CrraUtility{gamma},
        .w_grid = geometric_grid(1e-2, 1e2, 40),
        .shares = default_shares(21),
    };
}

SavingsParams scalar(double beta, double r, double y, Utility u) {
    return SavingsParams{
        .chain = MarkovChain{{1.0}},
        .R = Matrix{{r}},
        .y = {y},
        .discount = Matrix{{beta}},
        .utility = std::move(u),
        .w_grid = geometric_grid(1e-2, 1e2, 30),
        .shares = default_shares(11),
    };
}

TabulatedUtility log1p_table() {
    std::vector<double> c = {0.0};
    for (double x : geometric_grid(1e-3, 1e3, 40)) c.push_back(x);
    std::vector<double> u;
    for (double x : c) u.push_back(std::log1p(x));
    return {c, u};
}

// the gap instance: row sums of B above 1, radius below 1
SavingsParams gap_instance(std::size_t points) {
    return SavingsParams{
        .chain = MarkovChain{{0.8, 0.2}, {0.2, 0.8}},
        .R = Matrix{{1.08, 1.00}, {1.08, 1.00}},
        .y = {0.5, 0.2},
        .discount = Matrix{{0.95, 0.95}, {0.95, 0.95}},
        .utility = log1p_table(),
        .w_grid = geometric_grid(1e-3, 1e3, points),
        .shares = default_shares(41),
    };
}

}  // namespace

TEST(Utility, CrraAndTabulated) {
    EXPECT_DOUBLE_EQ(evaluate(CrraUtility{0.5}, 4.0), 4.0);  // 4^{1/2} / (1/2)
    EXPECT_EQ(evaluate(CrraUtility{0.5}, 0.0), 0.0);
    const TabulatedUtility t{{0.0, 1.0, 3.0}, {1.0, 2.0, 3.0}};
    EXPECT_DOUBLE_EQ(evaluate(t, 0.5), 1.5);
    EXPECT_DOUBLE_EQ(evaluate(t, 2.0), 2.5);
    EXPECT_DOUBLE_EQ(evaluate(t, 5.0), 4.0);  // last slope continues
    EXPECT_DOUBLE_EQ(utility_shift(t), 1.0);
}

TEST(Validation, RejectsBadParameters) {
    auto p = crra_two_state();
    p.y = {0.0};
    EXPECT_THROW(validate(p), InvalidInput);
    p = crra_two_state(1.0);
    EXPECT_THROW(validate(p), InvalidInput);
    p = crra_two_state();
    p.shares = {0.0, 0.5, 1.5};
    EXPECT_THROW(validate(p), InvalidInput);
    p = crra_two_state();
    p.w_grid = {-1.0, 1.0};
    EXPECT_THROW(validate(p), InvalidInput);
    p = crra_two_state();
    p.utility = TabulatedUtility{{0.0, 1.0, 2.0}, {0.0, 1.0, 3.0}};  // convex
    EXPECT_THROW(validate(p), InvalidInput);
    p.utility = TabulatedUtility{{0.0, 1.0}, {1.0, 0.5}};  // decreasing
    EXPECT_THROW(validate(p), InvalidInput);
    p.utility = TabulatedUtility{{0.1, 1.0}, {0.0, 1.0}};  // u(0) missing
    EXPECT_THROW(validate(p), InvalidInput);
    p = crra_two_state();
    p.R(0, 1) = -1.0;
    EXPECT_THROW(validate(p), InvalidInput);
}

TEST(SavingsMdp, PureConsumptionIsUtilityOfWealth) {
    auto p = scalar(0.0, 1.0, 0.0, log1p_table());
    p.shares = {1.0};
    const auto res = perov_solve(build_savings_mdp(p), WeightFunction::affine(1.0));
    ASSERT_TRUE(res.report.converged);
    for (std::size_t i = 0; i < p.w_grid.size(); ++i)
        EXPECT_NEAR(res.value->at(i, 0), evaluate(p.utility, p.w_grid[i]), 1e-12);
}

TEST(SavingsMdp, CakeEatingTransitions) {
    auto p = scalar(0.9, 1.0, 0.0, CrraUtility{0.5});
    p.shares = {0.0, 1.0};
    const TabulatedMdp t(build_savings_mdp(p));
    for (std::size_t i = 0; i < p.w_grid.size(); ++i) {
        const std::size_t k = t.action_begin(i);
        EXPECT_EQ(t.next_state(k, 0), p.w_grid[i]);
        EXPECT_EQ(t.next_state(k + 1, 0), 0.0);
    }
}

TEST(SavingsMdp, BudgetIdentity) {
    SavingsParams p{
        .chain = MarkovChain{{0.6, 0.4}, {0.3, 0.7}},
        .R = Matrix{{1.05, 0.9}, {1.2, 1.0}},
        .y = {0.4, 1.5},
        .discount = Matrix{{0.9, 0.9}, {0.9, 0.9}},
        .utility = CrraUtility{0.3},
        .w_grid = {0.5, 2.0, 6.0},
        .shares = {0.0, 0.25, 1.0},
    };
    const auto m = build_savings_mdp(p);
    const TabulatedMdp t(m);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t i = 0; i < 3; ++i) {
            const std::size_t node = z * 3 + i;
            ASSERT_EQ(t.action_end(node) - t.action_begin(node), 3u);
            for (std::size_t j = 0; j < 3; ++j) {
                const std::size_t k = t.action_begin(node) + j;
                const double w = p.w_grid[i], c = p.shares[j] * w;
                EXPECT_DOUBLE_EQ(t.action(k), c);
                EXPECT_DOUBLE_EQ(t.reward(k), std::pow(c, 0.7) / 0.7);
                for (std::size_t zn = 0; zn < 2; ++zn)
                    EXPECT_DOUBLE_EQ(t.next_state(k, zn), p.R(z, zn) * (w - c) + p.y[zn]);
            }
        }
}

TEST(CoefficientMatrix, General) {
    auto p = crra_two_state();
    p.R = Matrix{{0.9, 1.0}, {0.5, 0.99}};
    const auto b = savings_B_general(p);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t zn = 0; zn < 2; ++zn) EXPECT_DOUBLE_EQ(b(z, zn), p.chain(z, zn) * 0.87);
    EXPECT_DOUBLE_EQ(savings_B_general(scalar(0.95, 1.05, 0.0, CrraUtility{0.5}))(0, 0), 0.9975);

    auto q = crra_two_state();
    q.R = Matrix{{1.2, 0.8}, {1.0, 1.5}};
    const auto c = savings_B_general(q);
    EXPECT_DOUBLE_EQ(c(0, 0), 0.9 * 0.87 * 1.2);
    EXPECT_DOUBLE_EQ(c(0, 1), 0.1 * 0.87);
    EXPECT_DOUBLE_EQ(c(1, 0), 0.3 * 0.87);
    EXPECT_DOUBLE_EQ(c(1, 1), 0.7 * 0.87 * 1.5);
}

TEST(CoefficientMatrix, Crra) {
    EXPECT_DOUBLE_EQ(savings_B_crra(scalar(1.0, 4.0, 0.0, CrraUtility{0.5}), 0.5)(0, 0), 2.0);
    auto p = crra_two_state();
    p.R = Matrix{{1.0, 1.0}, {1.0, 1.0}};
    const auto b = savings_B_crra(p, 0.5);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t zn = 0; zn < 2; ++zn) EXPECT_DOUBLE_EQ(b(z, zn), p.chain(z, zn) * 0.87);
    const auto c = savings_B_crra(crra_two_state(), 0.5);
    EXPECT_DOUBLE_EQ(c(0, 0), 0.9 * 0.87 * std::sqrt(1.10));
    EXPECT_DOUBLE_EQ(c(0, 1), 0.1 * 0.87 * std::sqrt(0.95));
    EXPECT_THROW(savings_B_crra(p, 1.0), InvalidInput);
    EXPECT_THROW(savings_B_crra(p, 0.0), InvalidInput);
}

TEST(CoefficientMatrix, CrraIsDominatedByGeneral) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 20; ++t) {
        auto p = crra_two_state();
        for (std::size_t z = 0; z < 2; ++z)
            for (std::size_t zn = 0; zn < 2; ++zn) p.R(z, zn) = 0.5 + oracle::uniform(rng);
        const double gamma = 0.05 + 0.9 * oracle::uniform(rng);
        const auto bc = savings_B_crra(p, gamma), bg = savings_B_general(p);
        for (std::size_t z = 0; z < 2; ++z)
            for (std::size_t zn = 0; zn < 2; ++zn) EXPECT_LE(bc(z, zn), bg(z, zn));
        EXPECT_LE(spectral_radius(bc).radius, spectral_radius(bg).radius + 1e-8);
    }
}

TEST(WeightOffset, ZeroIncomeNeedsNoDoubling) {
    const auto c = choose_weight_offset(crra_two_state(), 1e-3);
    EXPECT_EQ(c.offset, 1.0);
    EXPECT_EQ(c.doublings, 0u);
}

TEST(WeightOffset, ScalarDoublingTerminates) {
    const auto p = scalar(0.9, 1.0, 1.0, log1p_table());
    const auto c = choose_weight_offset(p, 1e-3);
    // closed form: radius 0.9 (1 + 1/b)
    EXPECT_NEAR(c.certificate.radius, 0.9 * (1.0 + 1.0 / c.offset), 1e-8);
    EXPECT_LT(c.certificate.radius, 1.0);
    EXPECT_GE(0.9 * (1.0 + 2.0 / c.offset), 1.0 - 5e-4);  // half the offset would not have done
}

TEST(WeightOffset, TildeBetaBoundsTheRealizedRatios) {
    const auto p = gap_instance(60);
    const auto c = choose_weight_offset(p, 1e-3);
    const auto tb = compute_tilde_beta(build_savings_mdp(p), c.kappa);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t zn = 0; zn < 2; ++zn) {
            const double bound = p.discount(z, zn) * (std::max(1.0, p.R(z, zn)) + p.y[zn] / c.offset);
            EXPECT_NEAR(c.tilde_beta(z, zn), bound, 1e-15);
            EXPECT_LE(tb(z, zn), bound * (1.0 + 1e-14));
        }
}

TEST(WeightOffset, RefusesWhenLimitIsTooLarge) {
    EXPECT_THROW(choose_weight_offset(scalar(0.99, 1.05, 1.0, log1p_table()), 1e-3), PreconditionError);
}

TEST(Oracle, MyopicConsumesEverything) {
    auto p = crra_two_state();
    p.discount = Matrix(2, 0.0);
    const auto o = crra_zero_income_oracle(p, 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(o.h[0], 1.0);
    EXPECT_DOUBLE_EQ(o.h[1], 1.0);
    EXPECT_DOUBLE_EQ(o.theta[0], 1.0);
}

TEST(Oracle, ScalarClosedFormAndDenseSearch) {
    const double gamma = 0.5;
    const auto p = scalar(0.9, 1.1, 0.0, CrraUtility{gamma});
    const double q = 0.9 * std::sqrt(1.1);
    const auto o = crra_zero_income_oracle(p, gamma, 1e-13);
    const double closed = std::pow(1.0 - std::pow(q, 1.0 / gamma), -gamma);
    EXPECT_NEAR(o.h[0], closed, 1e-10 * closed);
    EXPECT_NEAR(o.theta[0], 1.0 / (1.0 + std::pow(q * closed, 1.0 / gamma)), 1e-8);
    // dense theta grid reproduces the fixed-point equation
    EXPECT_NEAR(oracle::scalar_crra_rhs(1.0 - gamma, q * o.h[0]), o.h[0], 1e-8);
}

TEST(Oracle, TwoStateResidual) {
    const auto o = crra_zero_income_oracle(crra_two_state(), 0.5, 1e-12);
    EXPECT_LE(o.residual, 1e-12);
    for (double h : o.h) EXPECT_GT(h, 1.0);
}

TEST(Oracle, Preconditions) {
    EXPECT_THROW(crra_zero_income_oracle(scalar(0.95, 1.2, 0.0, CrraUtility{0.5}), 0.5, 1e-10), PreconditionError);
    EXPECT_THROW(crra_zero_income_oracle(scalar(0.9, 1.0, 1.0, CrraUtility{0.5}), 0.5, 1e-10), PreconditionError);
}

TEST(Oracle, SolverMatchesScalarClosedForm) {
    // continuous-share oracle vs the 101-share solver: discretization error only
    const double gamma = 0.5;
    auto p = scalar(0.9, 1.1, 0.0, CrraUtility{gamma});
    p.shares = default_shares(101);
    SolveOptions opt;
    opt.tol = 1e-10;
    const auto res = perov_solve(build_savings_mdp(p), WeightFunction::power(1.0 - gamma), opt);
    ASSERT_TRUE(res.report.converged);
    const double q = 0.9 * std::sqrt(1.1);
    const double h = std::pow(1.0 - std::pow(q, 1.0 / gamma), -gamma);
    for (std::size_t i = 0; i < p.w_grid.size(); ++i) {
        const double w = p.w_grid[i];
        EXPECT_NEAR(res.value->at(i, 0) * (1.0 - gamma) / std::sqrt(w), h, 1e-4 * h);
    }
}

TEST(PlanValue, BaseCaseAndDiagonal) {
    const auto p = crra_two_state();
    EXPECT_DOUBLE_EQ(plan_value_vT(p, 0.5, 0, 4.0, 1), 4.0);
    auto d = crra_two_state();
    d.chain = MarkovChain{{1.0, 0.0}, {0.0, 1.0}};
    d.R = Matrix(2, 1.0);
    d.discount = Matrix(2, 0.8);
    EXPECT_NEAR(plan_value_vT(d, 0.5, 7, 9.0, 0), std::pow(0.8, 7) * 6.0, 1e-13);
    EXPECT_THROW(plan_value_vT(p, 0.5, -1, 1.0, 0), InvalidInput);
}

TEST(PlanValue, MatchesPathEnumeration) {
    const double gamma = 0.3;
    auto p = crra_two_state(gamma);
    p.R = Matrix{{1.3, 0.7}, {1.1, 1.6}};
    p.discount = Matrix{{0.9, 0.85}, {0.8, 0.95}};
    const int T = 5;
    const double w = 2.5, pw = 1.0 - gamma;
    for (std::size_t z0 = 0; z0 < 2; ++z0) {
        double total = 0.0;
        for (int path = 0; path < (1 << T); ++path) {
            double prob = 1.0, disc = 1.0, wealth = w;
            std::size_t z = z0;
            for (int t = 0; t < T; ++t) {
                const std::size_t zn = (path >> t) & 1;
                prob *= p.chain(z, zn);
                disc *= p.discount(z, zn);
                wealth *= p.R(z, zn);
                z = zn;
            }
            total += prob * disc * std::pow(wealth, pw) / pw;
        }
        EXPECT_NEAR(plan_value_vT(p, gamma, T, w, z0), total, 1e-12 * total);
    }
}

TEST(Classify, MyopicIsConvergent) {
    auto p = crra_two_state();
    p.discount = Matrix(2, 0.0);
    const auto c = classify_problem(p);
    EXPECT_EQ(c.verdict, ProblemClass::convergent);
    EXPECT_EQ(c.certificate.radius, 0.0);
}

TEST(Classify, ScalarDivergence) {
    const auto p = scalar(0.95, 1.2, 0.0, CrraUtility{0.5});
    const auto c = classify_problem(p);
    const double rho = 0.95 * std::sqrt(1.2);
    EXPECT_EQ(c.verdict, ProblemClass::divergent);
    EXPECT_NEAR(c.certificate.radius, rho, 1e-8);
    const double growth = std::pow(plan_value_vT(p, 0.5, 200, 1.0, 0), 1.0 / 200.0);
    EXPECT_NEAR(growth, rho, 0.05 * rho);
    EXPECT_NEAR(c.growth_exponent, growth, 1e-12);
}

TEST(Classify, GapInstanceIsConvergentWithFailingRowSums) {
    const auto p = gap_instance(30);
    const auto c = classify_problem(p);
    EXPECT_EQ(c.verdict, ProblemClass::convergent);
    EXPECT_FALSE(c.uniform.holds);
    const oracle::Rows b = {{0.8 * 0.95 * 1.08, 0.2 * 0.95}, {0.2 * 0.95 * 1.08, 0.8 * 0.95}};
    EXPECT_NEAR(c.certificate.radius, oracle::perron_2x2(b), 1e-8);
}

TEST(Classify, RadiusOneIsInconclusive) {
    // beta R^{1-gamma} = 1 exactly when R = beta^{-2} for gamma = 1/2
    const auto p = scalar(0.95, 1.0 / (0.95 * 0.95), 0.0, CrraUtility{0.5});
    EXPECT_EQ(classify_problem(p).verdict, ProblemClass::inconclusive);
}

TEST(Classify, AboveOneWithoutCrraIsInconclusive) {
    EXPECT_EQ(classify_problem(scalar(0.95, 1.2, 0.0, log1p_table())).verdict, ProblemClass::inconclusive);
    EXPECT_EQ(classify_problem(scalar(0.95, 1.2, 1.0, CrraUtility{0.5})).verdict, ProblemClass::inconclusive);
}

TEST(Invariants, GrowthLawSlope) {
    auto p = crra_two_state();
    p.R = Matrix{{1.4, 1.2}, {1.4, 1.2}};
    p.discount = Matrix(2, 0.97);
    const auto b = savings_B_crra(p, 0.5);
    const double rho = spectral_radius(b).radius;
    ASSERT_GT(rho, 1.0);
    const auto logs = plan_log_coefficients(b, 200);
    for (std::size_t z = 0; z < 2; ++z) {
        const double slope = (logs[200][z] - logs[100][z]) / 100.0;
        EXPECT_NEAR(slope, std::log(rho), 0.05 * std::log(rho));
    }
}

TEST(Invariants, MonotoneValueAndStableWeightedNorm) {
    auto norm_for = [](double wmax) {
        auto p = gap_instance(80);
        p.w_grid = geometric_grid(1e-3, wmax, 80);
        const auto c = choose_weight_offset(p, 1e-3);
        const auto res = perov_solve(build_savings_mdp(p), c.kappa);
        EXPECT_TRUE(res.report.converged);
        for (std::size_t z = 0; z < 2; ++z)
            for (std::size_t i = 1; i < p.w_grid.size(); ++i)
                EXPECT_GE(res.value->at(i, z), res.value->at(i - 1, z) - 1e-9);
        return weighted_norm(*res.value, WeightFunction::affine(1.0));
    };
    const double a = norm_for(1e3), b = norm_for(2e3);
    EXPECT_TRUE(std::isfinite(a));
    EXPECT_NEAR(b, a, 0.01 * a);
}
