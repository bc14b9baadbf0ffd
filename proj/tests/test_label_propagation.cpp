#include <gtest/gtest.h>

#include <random>

#include "prefseg/label_propagation.hpp"
#include "support.hpp"

using namespace prefseg;

namespace {

// Two clusters along orthogonal axes e0 / e1; patches with col < split get e0.
FeatureMap two_cluster_map(int gh, int gw, int dim, int split) {
    Tensor t({std::size_t(gh), std::size_t(gw), std::size_t(dim)});
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c) t[(std::size_t(r) * gw + c) * dim + (c < split ? 0 : 1)] = 1.0f;
    return FeatureMap(std::move(t));
}

FeatureMap constant_map(int gh, int gw, int dim) {
    Tensor t({std::size_t(gh), std::size_t(gw), std::size_t(dim)}, float(1.0 / std::sqrt(double(dim))));
    return FeatureMap(std::move(t));
}

std::vector<std::uint8_t> claimed_set(const std::vector<LabeledClick>& clicks, const FeatureMap& f, double tau,
                                      int ps) {
    const auto claim = claim_patches(clicks, f, {tau, ConflictRule::latest_wins}, ps);
    std::vector<std::uint8_t> out;
    for (const auto& c : claim) out.push_back(c.has_value());
    return out;
}

}  // namespace

TEST(Propagate, IdenticalFeaturesFillImage) {
    const auto f = constant_map(4, 5, 6);
    const Mask base(16, 20);
    const std::vector<LabeledClick> clicks{{5, 9, Label::foreground, 0}};
    const Mask out = propagate(clicks, f, base, {}, 4);
    EXPECT_EQ(out.count(), 16 * 20);
}

TEST(Propagate, OrthogonalClustersClaimOnlyClickCluster) {
    const auto f = two_cluster_map(4, 6, 3, 2);
    const Mask base = testsupport::square(32, 48, 0, 40, 32, 8);  // base has fg in the last column of patches
    const std::vector<LabeledClick> clicks{{3, 3, Label::foreground, 0}};
    const Mask out = propagate(clicks, f, base, {0.8, ConflictRule::max_similarity_wins}, 8);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 48; ++x) {
            const bool want = x < 16 || base.at(y, x);
            ASSERT_EQ(out.at(y, x), want) << y << "," << x;
        }
    EXPECT_EQ(out, testsupport::naive_propagate(clicks, f, base, 0.8, ConflictRule::max_similarity_wins, 8));
}

TEST(Propagate, LatestWinsOnSameCluster) {
    const auto f = two_cluster_map(2, 4, 2, 2);
    const Mask base(4, 8);
    const std::vector<LabeledClick> clicks{{0, 0, Label::foreground, 0}, {1, 3, Label::background, 1}};
    const Mask out = propagate(clicks, f, base, {0.8, ConflictRule::latest_wins}, 2);
    EXPECT_EQ(out.count(), 0);
    const std::vector<LabeledClick> rev{{1, 3, Label::background, 0}, {0, 0, Label::foreground, 1}};
    EXPECT_EQ(propagate(rev, f, base, {0.8, ConflictRule::latest_wins}, 2).count(), 16);
}

TEST(Propagate, MaxSimilarityTieGoesToBackground) {
    const auto f = constant_map(2, 2, 4);
    const Mask base(2, 2, 1);
    const std::vector<LabeledClick> clicks{{0, 0, Label::foreground, 0}, {0, 0, Label::background, 1}};
    EXPECT_EQ(propagate(clicks, f, base, {0.8, ConflictRule::max_similarity_wins}, 1).count(), 0);
    const std::vector<LabeledClick> rev{{0, 0, Label::background, 0}, {0, 0, Label::foreground, 1}};
    EXPECT_EQ(propagate(rev, f, base, {0.8, ConflictRule::max_similarity_wins}, 1).count(), 0);
}

TEST(Propagate, MaxSimilarityPrefersCloserClick) {
    // Patch 1 sits closer to patch 2 (bg click) than to patch 0 (fg click).
    Tensor t({1, 3, 2});
    const double a0 = 0.0, a1 = 0.5, a2 = 0.6;
    for (int p = 0; p < 3; ++p) {
        const double a = p == 0 ? a0 : p == 1 ? a1 : a2;
        t[p * 2] = float(std::cos(a));
        t[p * 2 + 1] = float(std::sin(a));
    }
    const FeatureMap f(std::move(t));
    const std::vector<LabeledClick> clicks{{0, 0, Label::foreground, 0}, {0, 2, Label::background, 1}};
    const Mask out = propagate(clicks, f, Mask(1, 3), {0.8, ConflictRule::max_similarity_wins}, 1);
    EXPECT_EQ(out.at(0, 0), 1);
    EXPECT_EQ(out.at(0, 1), 0);
    EXPECT_EQ(out.at(0, 2), 0);
}

TEST(Propagate, Errors) {
    const auto f = constant_map(2, 2, 3);
    const Mask base(4, 4);
    EXPECT_THROW(propagate({}, f, base, {}, 2), ValidationError);
    const std::vector<LabeledClick> oob{{4, 0, Label::foreground, 0}};
    EXPECT_THROW(propagate(oob, f, base, {}, 2), ValidationError);
    EXPECT_THROW(propagate(std::vector<LabeledClick>{{0, 0, Label::foreground, 0}}, f, Mask(4, 5), {}, 2),
                 ShapeError);
    EXPECT_THROW(PropagationConfig({1.5, ConflictRule::latest_wins}).validate(), ValidationError);
    EXPECT_THROW(PropagationConfig({-1.0, ConflictRule::latest_wins}).validate(), ValidationError);
    const FeatureMap zero(Tensor({2, 2, 3}));
    EXPECT_THROW(propagate(std::vector<LabeledClick>{{0, 0, Label::foreground, 0}}, zero, base, {}, 2),
                 ValidationError);
}

TEST(SimilarityMap, ClickedOrthogonalAntipodal) {
    Tensor t({1, 3, 2});
    t[0] = 1;   // clicked
    t[3] = 1;   // orthogonal
    t[4] = -1;  // antipodal
    const FeatureMap f(std::move(t));
    const Tensor s = similarity_map({0, 0, Label::foreground, 0}, f, 1);
    EXPECT_NEAR(s.at(0, 0), 1.0, 1e-5);
    EXPECT_NEAR(s.at(0, 1), 0.0, 1e-5);
    EXPECT_NEAR(s.at(0, 2), -1.0, 1e-5);
}

TEST(SimilarityMap, OrthogonalClustersOfGeneratedShape) {
    const auto f = two_cluster_map(3, 4, 5, 2);
    const Tensor s = similarity_map({0, 7, Label::background, 0}, f, 4);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) EXPECT_NEAR(s.at(r, c), c < 2 ? 1.0 : 0.0, 1e-5);
}

TEST(Propagate, MatchesBruteForceReference) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 200; ++t) {
        const auto in = testsupport::random_propagation_instance(rng);
        const Mask got = propagate(in.clicks, in.features, in.base, {in.tau, in.rule}, in.patch_size);
        const Mask want =
            testsupport::naive_propagate(in.clicks, in.features, in.base, in.tau, in.rule, in.patch_size);
        ASSERT_EQ(got, want) << "instance " << t;
    }
}

TEST(Propagate, TauMonotoneIdempotentLocal) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 200; ++t) {
        const auto in = testsupport::random_propagation_instance(rng);
        const PropagationConfig cfg{in.tau, in.rule};
        const Mask once = propagate(in.clicks, in.features, in.base, cfg, in.patch_size);
        ASSERT_EQ(propagate(in.clicks, in.features, once, cfg, in.patch_size), once) << "idempotence " << t;

        const double higher = std::min(1.0, in.tau + 0.1);
        const auto lo = claimed_set(in.clicks, in.features, in.tau, in.patch_size);
        const auto hi = claimed_set(in.clicks, in.features, higher, in.patch_size);
        for (std::size_t p = 0; p < lo.size(); ++p) ASSERT_LE(hi[p], lo[p]) << "monotonicity " << t;

        const int gw = in.features.grid_w();
        for (int y = 0; y < once.height(); ++y)
            for (int x = 0; x < once.width(); ++x) {
                if (once.at(y, x) == in.base.at(y, x)) continue;
                ASSERT_TRUE(lo[std::size_t(y / in.patch_size) * gw + x / in.patch_size]) << "locality " << t;
            }
    }
}
