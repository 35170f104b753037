#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "xret/errors.hpp"
#include "xret/numeric.hpp"

using namespace xret;
using namespace xret::testing;

TEST(Softmax, SymmetricPairIsHalfHalf) {
    const Vec w = softmax(Vec{0.0, 0.0});
    EXPECT_DOUBLE_EQ(w[0], 0.5);
    EXPECT_DOUBLE_EQ(w[1], 0.5);
}

TEST(Softmax, LogThreeGapGivesQuarterAndThreeQuarters) {
    // Frozen from an arbitrary-precision evaluation of exp/sum.
    for (double c : {-40.0, -1.7, 0.0, 1.7, 35.0}) {
        const Vec w = softmax(Vec{c, c + std::log(3.0)});
        EXPECT_NEAR(w[0], 0.25, 1e-12) << c;
        EXPECT_NEAR(w[1], 0.75, 1e-12) << c;
    }
}

TEST(Softmax, SingleElementIsOne) { EXPECT_DOUBLE_EQ(softmax(Vec{5.0})[0], 1.0); }

TEST(Softmax, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(softmax(Vec{}), InvalidArgument);
    EXPECT_THROW(softmax(Vec{1.0, NAN}), InvalidArgument);
    EXPECT_THROW(softmax(Vec{INFINITY}), InvalidArgument);
}

TEST(Softmax, LargeScoresDoNotOverflow) {
    const Vec w = softmax(Vec{1000.0, 1000.0, 999.0});
    EXPECT_TRUE(all_finite(w));
    EXPECT_NEAR(w[0] + w[1] + w[2], 1.0, 1e-12);
}

TEST(SoftmaxProperty, NormalizedShiftInvariantOrderPreserving) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> score(-50.0, 50.0);
    std::uniform_real_distribution<double> shift(-100.0, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t L = uniform_size(1, 64, rng);
        Vec s(L);
        for (double& x : s) x = score(rng);
        const Vec w = softmax(s);

        double sum = 0;
        for (double x : w) {
            EXPECT_GT(x, 0.0);
            EXPECT_LE(x, 1.0);
            sum += x;
        }
        ASSERT_NEAR(sum, 1.0, 1e-12);

        const double k = shift(rng);
        Vec shifted = s;
        for (double& x : shifted) x += k;
        const Vec w2 = softmax(shifted);
        ASSERT_LE(max_abs_diff(w, w2), 1e-12);

        for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t j = 0; j < L; ++j) {
                if (s[i] > s[j]) ASSERT_GE(w[i], w[j]);
                // Strict where the weights are representable apart.
                if (s[i] > s[j] && w[j] > 1e-300) ASSERT_GT(w[i], w[j]);
            }
        }
    }
}

TEST(SoftmaxBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = uniform_size(1, 8, rng);
        const Vec s = random_vec(L, rng, 2.0);
        const Vec g = random_vec(L, rng);
        const Vec analytic = softmax_backward(softmax(s), g);
        const Vec numeric = finite_diff_grad([&](std::span<const double> x) { return dot(softmax(x), g); }, s);
        for (std::size_t i = 0; i < L; ++i) EXPECT_TRUE(grad_close(analytic[i], numeric[i], 1e-6)) << i;
    }
}

TEST(L2Normalize, Examples) {
    const Vec a = l2_normalize(Vec{3.0, 4.0});
    EXPECT_DOUBLE_EQ(a[0], 0.6);
    EXPECT_DOUBLE_EQ(a[1], 0.8);

    const Vec z = l2_normalize(Vec{0.0, 0.0}, 1e-12);
    EXPECT_EQ(z, (Vec{0.0, 0.0}));

    EXPECT_EQ(l2_normalize(Vec{1.0, 0.0, 0.0}), (Vec{1.0, 0.0, 0.0}));
}

TEST(L2NormalizeProperty, UnitNormAndIdempotent) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> log_scale(-6.0, 6.0);
    for (int trial = 0; trial < 1000; ++trial) {
        Vec v = random_vec(uniform_size(1, 32, rng), rng, std::pow(10.0, log_scale(rng)));
        if (std::sqrt(squared_norm(v)) < 1e-6) continue;
        const Vec once = l2_normalize(v);
        ASSERT_NEAR(std::sqrt(squared_norm(once)), 1.0, 1e-12);
        ASSERT_LE(max_abs_diff(once, l2_normalize(once)), 1e-12);
    }
}

TEST(L2NormalizeBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = uniform_size(1, 6, rng);
        const Vec v = random_vec(n, rng);
        const Vec g = random_vec(n, rng);
        const Vec analytic = l2_normalize_backward(v, g);
        const Vec numeric = finite_diff_grad([&](std::span<const double> x) { return dot(l2_normalize(x), g); }, v);
        for (std::size_t i = 0; i < n; ++i) EXPECT_TRUE(grad_close(analytic[i], numeric[i], 1e-6));
    }
}

TEST(FiniteDiffGrad, Quadratic) {
    const Vec g = finite_diff_grad([](std::span<const double> x) { return squared_norm(x); }, Vec{1.0, 2.0});
    EXPECT_NEAR(g[0], 2.0, 1e-8);
    EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiffGrad, ConstantFunction) {
    const Vec g = finite_diff_grad([](std::span<const double>) { return 3.5; }, Vec{1.0, -2.0, 7.0});
    EXPECT_EQ(g, (Vec{0.0, 0.0, 0.0}));
}

TEST(FiniteDiffGrad, ReportsOffendingCoordinate) {
    auto f = [](std::span<const double> x) { return x[1] > 1.0 ? NAN : x[0]; };
    try {
        finite_diff_grad(f, Vec{0.0, 1.0, 0.0});
        FAIL() << "expected NonFiniteValue";
    } catch (const NonFiniteValue& e) {
        EXPECT_EQ(e.coordinate(), 1u);
    }
}

TEST(FiniteDiffGrad, RejectsNonPositiveStep) {
    EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, Vec{1.0}, 0.0), InvalidArgument);
}

TEST(Matrix, FromRowsRejectsRaggedInput) {
    EXPECT_THROW(Matrix::from_rows({{1.0, 2.0}, {3.0}}), DimensionMismatch);
    const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    EXPECT_EQ(m(1, 0), 3.0);
    EXPECT_EQ(column_mean(m), (Vec{2.0, 3.0}));
}
