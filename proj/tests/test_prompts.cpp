#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace ssfam;
namespace ts = testing_support;

namespace {

ScribbleMap scribble_with(int side, const std::vector<std::pair<int, int>>& fg, const std::vector<std::pair<int, int>>& bg) {
    Mask8 m(side, side, 1, 0);
    for (auto [x, y] : fg) m(y, x) = 1;
    for (auto [x, y] : bg) m(y, x) = 2;
    return ScribbleMap{m};
}

void expect_membership(const ScribbleMap& s, const PointPrompts& p) {
    for (const auto& pt : p.points) {
        const auto v = s(pt.y, pt.x);
        if (pt.label == PointLabel::positive) EXPECT_EQ(v, 1) << pt.x << "," << pt.y;
        else EXPECT_EQ(v, 2) << pt.x << "," << pt.y;
    }
}

}  // namespace

TEST(SamplePoints, PopulationOfTenWithKTenReturnsEveryPixel) {
    std::vector<std::pair<int, int>> fg, bg;
    for (int i = 0; i < 5; ++i) {
        fg.emplace_back(i, 1);
        bg.emplace_back(i, 6);
    }
    const ScribbleMap s = scribble_with(8, fg, bg);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const PointPrompts p = sample_points(s, 10, seed);
        ASSERT_EQ(p.k(), 10);
        std::set<std::pair<int, int>> pos, neg;
        for (const auto& pt : p.points) (pt.label == PointLabel::positive ? pos : neg).emplace(pt.x, pt.y);
        using Set = std::set<std::pair<int, int>>;
        EXPECT_EQ(pos, Set(fg.begin(), fg.end()));
        EXPECT_EQ(neg, Set(bg.begin(), bg.end()));
    }
}

TEST(SamplePoints, ForegroundOnlyGivesAllPositive) {
    const ScribbleMap s = scribble_with(8, {{1, 1}, {2, 1}, {3, 1}}, {});
    const PointPrompts p = sample_points(s, 10, 3);
    ASSERT_EQ(p.k(), 10);
    for (const auto& pt : p.points) EXPECT_EQ(pt.label, PointLabel::positive);
    expect_membership(s, p);
}

TEST(SamplePoints, SameSeedSameDraw) {
    const ScribbleMap s = ts::random_scribble(32, 32, 7);
    EXPECT_EQ(sample_points(s, 10, 42), sample_points(s, 10, 42));
    EXPECT_NE(sample_points(s, 10, 42), sample_points(s, 10, 43));
}

TEST(SamplePoints, CountAndMembershipOverManySeeds) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const ScribbleMap s = ts::random_scribble(24, 24, seed);
        for (int k : {1, 2, 10, 20, 30}) {
            const PointPrompts p = sample_points(s, k, seed * 31 + static_cast<std::uint64_t>(k));
            ASSERT_EQ(p.k(), k);
            expect_membership(s, p);
        }
    }
}

TEST(SamplePoints, EachNonEmptyClassGetsAPoint) {
    // one background pixel against many foreground pixels
    std::vector<std::pair<int, int>> fg;
    for (int x = 0; x < 16; ++x)
        for (int y = 0; y < 4; ++y) fg.emplace_back(x, y);
    const ScribbleMap s = scribble_with(16, fg, {{5, 12}});
    const PointPrompts p = sample_points(s, 10, 1);
    int neg = 0;
    for (const auto& pt : p.points) neg += pt.label == PointLabel::negative;
    EXPECT_EQ(neg, 1);
    EXPECT_EQ(p.k(), 10);
}

TEST(SamplePoints, SplitIsProportional) {
    std::vector<std::pair<int, int>> fg, bg;
    for (int x = 0; x < 16; ++x) {
        fg.emplace_back(x, 0);
        for (int y = 8; y < 11; ++y) bg.emplace_back(x, y);
    }
    const PointPrompts p = sample_points(scribble_with(16, fg, bg), 20, 9);
    int pos = 0;
    for (const auto& pt : p.points) pos += pt.label == PointLabel::positive;
    EXPECT_EQ(pos, 5);
}

TEST(SamplePoints, SmallClassIsSampledWithReplacement) {
    const ScribbleMap s = scribble_with(8, {{0, 0}, {1, 0}}, {{7, 7}, {6, 7}});
    const PointPrompts p = sample_points(s, 30, 2);
    EXPECT_EQ(p.k(), 30);
    expect_membership(s, p);
}

TEST(SamplePoints, InvalidInputs) {
    const ScribbleMap s = ts::random_scribble(16, 16, 1);
    EXPECT_THROW(sample_points(s, 0, 1), PreconditionError);
    EXPECT_THROW(sample_points(ScribbleMap{Mask8(8, 8, 1, 0)}, 10, 1), EmptyScribbleError);
}

TEST(SamplePoints, JsonIsListOfTriples) {
    PointPrompts p;
    p.points = {{3, 4, PointLabel::positive}, {5, 6, PointLabel::negative}};
    EXPECT_EQ(to_json(p).dump(), "[[3,4,1],[5,6,0]]");
}

class PromptEncoderTest : public ::testing::Test {
protected:
    ParameterStore store;
    Rng rng{5};
    PromptEncoder enc{store, 32, rng};
};

TEST_F(PromptEncoderTest, IdenticalPointsGiveIdenticalRows) {
    Tape t(false);
    PointPrompts p;
    p.points = {{10, 20, PointLabel::positive}, {10, 20, PointLabel::positive}, {3, 3, PointLabel::negative}};
    const Matrix m = enc.encode(t, p, 64).value();
    ASSERT_EQ(m.rows(), 3);
    ASSERT_EQ(m.cols(), 32);
    for (int c = 0; c < 32; ++c) EXPECT_EQ(m(0, c), m(1, c));
    EXPECT_TRUE(m.all_finite());
}

TEST_F(PromptEncoderTest, OppositeLabelsDifferByEmbeddingDifference) {
    Tape t(false);
    PointPrompts p;
    p.points = {{17, 40, PointLabel::positive}, {17, 40, PointLabel::negative}};
    const Matrix m = enc.encode(t, p, 64).value();
    const Matrix& pos = enc.positive_embedding().value;
    const Matrix& neg = enc.negative_embedding().value;
    for (int c = 0; c < 32; ++c) EXPECT_NEAR(m(0, c) - m(1, c), pos(0, c) - neg(0, c), 1e-5);
}

TEST_F(PromptEncoderTest, OutOfRangeCoordinateIsRangeError) {
    Tape t(false);
    PointPrompts p;
    p.points = {{64, 0, PointLabel::positive}};
    EXPECT_THROW(enc.encode(t, p, 64), RangeError);
    p.points = {{0, -1, PointLabel::positive}};
    EXPECT_THROW(enc.encode(t, p, 64), RangeError);
    p.points = {{63, 63, PointLabel::positive}};
    EXPECT_NO_THROW(enc.encode(t, p, 64));
}

TEST_F(PromptEncoderTest, OddWidthIsConfigError) {
    ParameterStore s;
    Rng r(1);
    EXPECT_THROW(PromptEncoder(s, 31, r), ConfigError);
}
