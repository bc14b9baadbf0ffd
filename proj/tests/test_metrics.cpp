#include <gtest/gtest.h>

#include <random>

#include "prefseg/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace prefseg;
using testsupport::square;

TEST(Dice, HandCountedCases) {
    for (const auto& c : testsupport::hand_cases()) {
        const double want_dice = c.size_a + c.size_b == 0 ? 1.0 : double(2 * c.inter) / double(c.size_a + c.size_b);
        const std::int64_t uni = c.size_a + c.size_b - c.inter;
        const double want_iou = uni == 0 ? 1.0 : double(c.inter) / double(uni);
        EXPECT_EQ(metrics::dice(c.a, c.b), want_dice) << c.name;
        EXPECT_EQ(metrics::iou(c.a, c.b), want_iou) << c.name;
    }
}

TEST(Dice, HalfSquareLiteralValues) {
    const Mask a = square(16, 16, 0, 0, 16, 16), b = square(16, 16, 0, 0, 16, 8);
    EXPECT_NEAR(metrics::dice(a, b), 0.6667, 1e-4);
    EXPECT_NEAR(metrics::dice(a, b), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(metrics::iou(a, b), 0.5);
}

TEST(Dice, GridMismatchThrows) {
    EXPECT_THROW(metrics::dice(Mask(4, 4), Mask(4, 5)), ShapeError);
    EXPECT_THROW(metrics::iou(Mask(4, 4), Mask(5, 4)), ShapeError);
    EXPECT_THROW(metrics::hd95(Mask(4, 4), Mask(5, 4)), ShapeError);
}

TEST(Dice, RangeSymmetryAndIouIdentity) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 300; ++t) {
        const int h = 1 + int(rng() % 24), w = 1 + int(rng() % 24);
        const double da = 0.05 + 0.9 * double(rng() % 100) / 100.0;
        const Mask a = testsupport::random_mask(rng, h, w, da);
        const Mask b = testsupport::random_mask(rng, h, w, 1.0 - da);
        const double d = metrics::dice(a, b), j = metrics::iou(a, b);
        ASSERT_GE(d, 0.0);
        ASSERT_LE(d, 1.0);
        ASSERT_EQ(d, metrics::dice(b, a));
        ASSERT_EQ(metrics::dice(a, a), 1.0);
        ASSERT_NEAR(d, 2 * j / (1 + j), 1e-9);
    }
}

TEST(Hd95, IdenticalIsZeroAndEmptyIsUndefined) {
    const Mask a = square(20, 20, 3, 4, 7, 5);
    ASSERT_TRUE(metrics::hd95(a, a).has_value());
    EXPECT_EQ(*metrics::hd95(a, a), 0.0);
    EXPECT_FALSE(metrics::hd95(a, Mask(20, 20)).has_value());
    EXPECT_FALSE(metrics::hd95(Mask(20, 20), a).has_value());
    EXPECT_FALSE(metrics::hd95(Mask(20, 20), Mask(20, 20)).has_value());
}

TEST(Hd95, OffsetSquaresMatchBruteForce) {
    const Mask a = square(32, 32, 10, 8, 8, 8), b = square(32, 32, 10, 11, 8, 8);
    const auto got = metrics::hd95(a, b);
    ASSERT_TRUE(got.has_value());
    EXPECT_NEAR(*got, testsupport::naive_hd95(a, b), 1e-9);
    // Frozen from the brute-force oracle: 28 boundary pixels per square,
    // 56 pooled distances, 95th percentile falls among the 3-pixel shifts.
    EXPECT_NEAR(*got, 3.0, 1e-9);
}

TEST(Hd95, RandomPairsMatchBruteForceAndAreSymmetric) {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 100; ++t) {
        const int h = 2 + int(rng() % 31), w = 2 + int(rng() % 31);
        Mask a = t % 2 ? testsupport::random_mask(rng, h, w, 0.3) : testsupport::random_rect_mask(rng, h, w, 3);
        Mask b = t % 3 ? testsupport::random_rect_mask(rng, h, w, 2) : testsupport::random_mask(rng, h, w, 0.5);
        if (a.count() == 0) a.set(0, 0, true);
        if (b.count() == 0) b.set(h - 1, w - 1, true);
        const auto fast = metrics::hd95(a, b);
        ASSERT_TRUE(fast.has_value());
        ASSERT_NEAR(*fast, testsupport::naive_hd95(a, b), 1e-9) << "pair " << t << " " << h << "x" << w;
        ASSERT_NEAR(*fast, *metrics::hd95(b, a), 1e-12);
    }
}

TEST(Hd95, BoundaryIncludesGridEdge) {
    const Mask full(5, 5, 1);
    EXPECT_EQ(metrics::boundary_pixels(full).size(), 16u);
    EXPECT_EQ(metrics::boundary_pixels(square(5, 5, 1, 1, 3, 3)).size(), 8u);
}

TEST(Percentile, InclusiveLinearInterpolation) {
    std::vector<double> v{5, 1, 4, 2, 3};
    EXPECT_NEAR(metrics::percentile_inclusive(v, 0.95), 4.8, 1e-12);
    EXPECT_EQ(metrics::percentile_inclusive(v, 0.0), 1.0);
    EXPECT_EQ(metrics::percentile_inclusive(v, 1.0), 5.0);
    std::vector<double> one{7};
    EXPECT_EQ(metrics::percentile_inclusive(one, 0.95), 7.0);
    std::vector<double> none;
    EXPECT_THROW(metrics::percentile_inclusive(none, 0.5), ValidationError);
}

TEST(Summary, PopulationStatistics) {
    const auto s = metrics::summarize({1, 2, 3, 4});
    EXPECT_EQ(s.count, 4u);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
    EXPECT_EQ(metrics::summarize({}).count, 0u);
}

TEST(Evaluate, BundlesAllMetrics) {
    const Mask a = square(16, 16, 0, 0, 16, 16), b = square(16, 16, 0, 0, 16, 8);
    const auto r = metrics::evaluate(b, a);
    EXPECT_NEAR(r.dice, 2.0 / 3.0, 1e-12);
    EXPECT_EQ(r.iou, 0.5);
    ASSERT_TRUE(r.hd95.has_value());
    EXPECT_NEAR(*r.hd95, testsupport::naive_hd95(b, a), 1e-9);
}
