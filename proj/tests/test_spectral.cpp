#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "perov/spectral.hpp"

using namespace perov;

namespace {

NonnegativeMatrix nn(const oracle::Rows& r) { return NonnegativeMatrix(Matrix::from_rows(r)); }

}  // namespace

TEST(SupNorm, IdentityIsOne) { EXPECT_EQ(operator_sup_norm(Matrix::identity(3)), 1.0); }

TEST(SupNorm, MaxAbsoluteRowSum) {
    EXPECT_DOUBLE_EQ(operator_sup_norm(Matrix{{0.5, 0.5}, {0.1, 0.2}}), 1.0);
    EXPECT_DOUBLE_EQ(operator_sup_norm(Matrix{{1.0, -2.0}, {0.5, 0.5}}), 3.0);
}

TEST(SupNorm, MatchesBruteForceOverUnitBall) {
    const oracle::Rows a = {{0.0, 2.0}, {3.0, 0.0}};
    EXPECT_DOUBLE_EQ(operator_sup_norm(Matrix::from_rows(a)), 3.0);
    EXPECT_DOUBLE_EQ(oracle::brute_sup_norm(a), 3.0);

    std::mt19937_64 rng(5);
    for (int t = 0; t < 10; ++t) {
        auto r = oracle::random_nonnegative(3, rng);
        r[1][2] = -r[1][2];
        EXPECT_NEAR(operator_sup_norm(Matrix::from_rows(r)), oracle::brute_sup_norm(r, 20), 1e-12);
    }
}

TEST(SupNorm, RejectsNonFinite) {
    Matrix m{{1.0, 0.0}, {0.0, 1.0}};
    m(1, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(operator_sup_norm(m), InvalidInput);
    m(1, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(operator_sup_norm(m), InvalidInput);
}

TEST(NonnegativeMatrixTest, Validation) {
    EXPECT_THROW(NonnegativeMatrix({{0.5, -0.1}, {0.0, 0.0}}), InvalidInput);
    EXPECT_THROW(NonnegativeMatrix(Matrix{}), InvalidInput);
    EXPECT_THROW(Matrix({{1.0, 2.0}, {3.0}}), InvalidInput);
    EXPECT_THROW(MarkovChain({{0.5, 0.4}, {0.5, 0.5}}), InvalidInput);
    EXPECT_NO_THROW(MarkovChain({{0.5, 0.5}, {0.0, 1.0}}));
}

TEST(SpectralRadius, OneByOne) {
    const auto c = spectral_radius(NonnegativeMatrix{{0.5}});
    EXPECT_NEAR(c.radius, 0.5, 1e-12);
    EXPECT_TRUE(c.certified);
    EXPECT_LE(c.lower_bound, 0.5 + 1e-15);
    EXPECT_GE(c.upper_bound, 0.5 - 1e-15);
}

TEST(SpectralRadius, PermutationHasRadiusOne) {
    const auto c = spectral_radius(NonnegativeMatrix{{0.0, 1.0}, {1.0, 0.0}});
    EXPECT_NEAR(c.radius, 1.0, 1e-8);
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::inconclusive);
}

TEST(SpectralRadius, ZeroMatrix) {
    const auto c = spectral_radius(NonnegativeMatrix{{0.0, 0.0}, {0.0, 0.0}});
    EXPECT_EQ(c.radius, 0.0);
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::below_one);
}

TEST(SpectralRadius, NilpotentMatrix) {
    const auto c = spectral_radius(NonnegativeMatrix{{0.0, 5.0}, {0.0, 0.0}});
    EXPECT_NEAR(c.radius, 0.0, 1e-8);
}

TEST(SpectralRadius, MixedTwoByTwoMatchesCharacteristicRoot) {
    const oracle::Rows b = {{0.9975, 0.01}, {0.05, 0.4}};
    const auto c = spectral_radius(nn(b), 1e-10);
    EXPECT_NEAR(c.radius, oracle::perron_2x2(b), 1e-10);
    EXPECT_LE(c.lower_bound, oracle::perron_2x2(b) + 1e-14);
    EXPECT_GE(c.upper_bound, oracle::perron_2x2(b) - 1e-14);
}

TEST(SpectralRadius, RandomMatricesAgainstClosedForms) {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 40; ++t) {
        const auto b2 = oracle::random_nonnegative(2, rng);
        EXPECT_NEAR(spectral_radius(nn(b2)).radius, oracle::perron_2x2(b2), 1e-8);
        const auto b3 = oracle::random_nonnegative(3, rng);
        EXPECT_NEAR(spectral_radius(nn(b3)).radius, oracle::perron_3x3(b3), 1e-8);
    }
}

TEST(SpectralRadius, ReducibleBlocks) {
    // block upper triangular: radius is the larger diagonal block radius
    const oracle::Rows b = {{0.3, 0.7, 0.2}, {0.0, 0.6, 0.0}, {0.0, 0.0, 0.8}};
    EXPECT_NEAR(spectral_radius(nn(b)).radius, 0.8, 1e-8);
}

TEST(SpectralRadius, GelfandTraceApproachesRadius) {
    const oracle::Rows b = {{0.8208, 0.19}, {0.2052, 0.76}};
    const auto c = spectral_radius(nn(b));
    ASSERT_NE(c.gelfand_at(1), nullptr);
    EXPECT_NEAR(c.gelfand_at(1)->value, 1.0108, 1e-12);
    ASSERT_NE(c.gelfand_at(1u << 20), nullptr);
    EXPECT_NEAR(c.gelfand_at(1u << 20)->value, oracle::perron_2x2(b), 1e-5);
    for (const auto& t : c.gelfand_trace) EXPECT_GE(t.value, oracle::perron_2x2(b) - 1e-12);
}

TEST(SpectralRadius, ScaleEquivariance) {
    std::mt19937_64 rng(99);
    const auto b = oracle::random_nonnegative(3, rng);
    auto scaled = b;
    for (auto& r : scaled)
        for (auto& x : r) x *= 7.5;
    EXPECT_NEAR(spectral_radius(nn(scaled)).radius, 7.5 * spectral_radius(nn(b)).radius, 1e-7);
}

TEST(SpectralRadius, RejectsBadTolerance) {
    EXPECT_THROW(spectral_radius(NonnegativeMatrix{{0.5}}, 0.0), InvalidInput);
    EXPECT_THROW(spectral_radius(NonnegativeMatrix{{0.5}}, -1.0), InvalidInput);
}

TEST(SpectralRadius, HugeEntriesDoNotOverflow) {
    const auto c = spectral_radius(NonnegativeMatrix{{1e200, 1e200}, {1e200, 1e200}});
    EXPECT_NEAR(c.radius / 2e200, 1.0, 1e-8);
}

TEST(ClassifyRadius, Margins) {
    SpectralCertificate c;
    c.certified = true;
    c.radius = 0.999;
    c.lower_bound = c.upper_bound = 0.999;
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::below_one);
    c.radius = c.lower_bound = c.upper_bound = 1.0 + 5e-7;
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::inconclusive);
    c.radius = c.lower_bound = c.upper_bound = 1.01;
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::above_one);
}

TEST(UniformConditionTest, Examples) {
    const auto a = check_uniform_condition(NonnegativeMatrix{{0.5, 0.3}, {0.2, 0.2}});
    EXPECT_TRUE(a.holds);
    EXPECT_DOUBLE_EQ(a.row_sums[0], 0.8);
    EXPECT_DOUBLE_EQ(a.row_sums[1], 0.4);
    EXPECT_FALSE(check_uniform_condition(NonnegativeMatrix{{1.1, 0.0}, {0.0, 0.5}}).holds);
}

TEST(UniformConditionTest, StrongerThanSpectralCondition) {
    // row sums (1.05, 0.60); radius from the characteristic polynomial is below 1
    const oracle::Rows b = {{0.95, 0.10}, {0.30, 0.30}};
    const auto u = check_uniform_condition(nn(b));
    EXPECT_FALSE(u.holds);
    EXPECT_NEAR(u.row_sums[0], 1.05, 1e-15);
    EXPECT_NEAR(u.row_sums[1], 0.60, 1e-15);
    const double rho = oracle::perron_2x2(b);
    ASSERT_LT(rho, 1.0);
    const auto c = spectral_radius(nn(b));
    EXPECT_NEAR(c.radius, rho, 1e-8);
    EXPECT_EQ(classify_radius(c, 1e-6), RadiusVerdict::below_one);
}

TEST(Neumann, Examples) {
    const auto z = neumann_apply(NonnegativeMatrix{{0.0, 0.0}, {0.0, 0.0}}, std::vector<double>{1.0, 2.0}, 1e-12);
    EXPECT_EQ(z[0], 1.0);
    EXPECT_EQ(z[1], 2.0);
    const auto h = neumann_apply(NonnegativeMatrix{{0.5}}, std::vector<double>{1.0}, 1e-12);
    EXPECT_NEAR(h[0], 2.0, 1e-12);
}

TEST(Neumann, MatchesLongTruncatedSeries) {
    const oracle::Rows b = {{0.2, 0.3}, {0.1, 0.4}};
    const auto ref = oracle::truncated_series(b, {1.0, 1.0}, 200);
    const double tol = 1e-12;
    const auto s = neumann_apply(nn(b), std::vector<double>{1.0, 1.0}, tol);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_GE(s[i], ref[i] - 1e-14);
        EXPECT_LE(s[i], ref[i] + tol);
    }
    EXPECT_NEAR(s[0], 2.0, 1e-12);  // (I - B)^{-1} 1 = (2, 2)
}

TEST(Neumann, UpperApproximationOnSlowSeries) {
    const oracle::Rows b = {{0.8208, 0.19}, {0.2052, 0.76}};
    const std::vector<double> c = {0.3, 1.7};
    const auto ref = oracle::truncated_series(b, c, 20000);
    const auto s = neumann_apply(nn(b), c, 1e-9);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_GE(s[i], ref[i] - 1e-9);
        EXPECT_LE(s[i], ref[i] + 1e-9);
    }
}

TEST(Neumann, Preconditions) {
    EXPECT_THROW(neumann_apply(NonnegativeMatrix{{1.2}}, std::vector<double>{1.0}, 1e-9), PreconditionError);
    EXPECT_THROW(neumann_apply(NonnegativeMatrix{{0.5}}, std::vector<double>{-1.0}, 1e-9), InvalidInput);
    EXPECT_THROW(neumann_apply(NonnegativeMatrix{{0.5}}, std::vector<double>{1.0, 1.0}, 1e-9), InvalidInput);
    EXPECT_THROW(neumann_apply(NonnegativeMatrix{{0.5}}, std::vector<double>{1.0}, 0.0), InvalidInput);
}
