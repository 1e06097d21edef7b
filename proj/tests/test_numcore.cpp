#include "msgm/numcore.hpp"

#include <gtest/gtest.h>

using namespace msgm;

TEST(Rng, SameSeedSameStream) {
    RngState a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.normal(), b.normal());
        EXPECT_EQ(a.uniform(-1, 1), b.uniform(-1, 1));
    }
}

TEST(Rng, SplitIgnoresParentPosition) {
    RngState a(7), b(7);
    for (int i = 0; i < 10; ++i) a.normal();
    RngState sa = a.split(3), sb = b.split(3);
    EXPECT_EQ(sa.seed(), sb.seed());
    EXPECT_EQ(sa.normal(), sb.normal());
    EXPECT_NE(a.split(3).seed(), a.split(4).seed());
}

TEST(Rng, NormalMomentsLawOfLargeNumbers) {
    RngState rng(1);
    const int n = 200000;
    const Tensor z = gaussian_sample(rng, n, 1);
    const double mean = z.mean();
    const double var = (z.array() - mean).square().sum() / (n - 1);
    // 5 standard errors
    EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(var, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Rng, UniformAndIndexRanges) {
    RngState rng(2);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform(2.0, 5.0);
        ASSERT_GE(u, 2.0);
        ASSERT_LT(u, 5.0);
        sum += u;
        ASSERT_LT(rng.index(7), 7u);
    }
    EXPECT_NEAR(sum / n, 3.5, 5.0 * std::sqrt(0.75 / n));
}

TEST(Rng, RademacherBalanced) {
    RngState rng(3);
    int plus = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) plus += rng.rademacher() > 0;
    EXPECT_NEAR(plus / double(n), 0.5, 5.0 * 0.5 / std::sqrt(n));
}

TEST(Rng, EmptyShapeRejected) {
    RngState rng(0);
    EXPECT_THROW(gaussian_sample(rng, 0, 2), ValidationError);
}

TEST(Silu, ValuesAndDerivative) {
    Tensor x(1, 5);
    x << -30, -1, 0, 0.5, 30;
    const Tensor y = silu(x);
    EXPECT_NEAR(y(0, 2), 0.0, 1e-15);
    EXPECT_NEAR(y(0, 3), 0.5 / (1 + std::exp(-0.5)), 1e-15);
    EXPECT_NEAR(y(0, 4), 30.0, 1e-9);
    const Tensor g = silu_grad(x);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
        Tensor xp = x, xm = x;
        xp(0, i) += h;
        xm(0, i) -= h;
        EXPECT_NEAR(g(0, i), (silu(xp)(0, i) - silu(xm)(0, i)) / (2 * h), 1e-8);
    }
}
