#include <gtest/gtest.h>

#include "support.hpp"

using namespace ssfam;
namespace ts = testing_support;

namespace {

using Vec = std::vector<double>;

Vec constant(std::size_t n, double v) { return Vec(n, v); }

ImageF flat_rgb(int h, int w, float v = 0.5f) { return ImageF(h, w, 3, v); }

/// Left half black, right half white.
ImageF edge_rgb(int h, int w) {
    ImageF img(h, w, 3, 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = w / 2; x < w; ++x)
            for (int c = 0; c < 3; ++c) img(y, x, c) = 1.0f;
    return img;
}

Vec step_pred(int h, int w) {
    Vec p(static_cast<std::size_t>(h) * w, 0.1);
    for (int y = 0; y < h; ++y)
        for (int x = w / 2; x < w; ++x) p[static_cast<std::size_t>(y) * w + x] = 0.9;
    return p;
}

Vec binary_target(int h, int w, std::uint64_t seed) {
    Vec u = ts::uniform_vector(static_cast<std::size_t>(h) * w, 0.0, 1.0, seed);
    for (double& v : u) v = v > 0.5 ? 1.0 : 0.0;
    return u;
}

void expect_grad_ok(const ts::GradCheck& r, const char* what) {
    EXPECT_GE(r.fraction_within, 0.95) << what;
    EXPECT_LE(r.worst, 1e-2) << what;
}

}  // namespace

// ---------------------------------------------------------------------------
// partial cross entropy

TEST(Pce, HandComputedTwoPixelExample) {
    Mask8 m(1, 3, 1, 0);
    m(0, 0) = 1;
    m(0, 1) = 2;
    const Vec pred{0.8, 0.3, 0.99};
    const auto r = losses::pce<double>(pred, ScribbleMap{m});
    EXPECT_NEAR(r.value, (-std::log(0.8) - std::log(0.7)) / 2.0, 1e-12);
    EXPECT_NEAR(r.value, 0.2899, 1e-4);
    EXPECT_EQ(r.grad[2], 0.0);  // unlabelled pixel excluded
    EXPECT_FALSE(r.warning);
}

TEST(Pce, PerfectPredictionIsNearZero) {
    const ScribbleMap s = ts::random_scribble(16, 16, 2);
    Vec pred(256, 0.5);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto code = s.raster().data()[i];
        if (code == 1) pred[i] = 1.0 - 1e-6;
        if (code == 2) pred[i] = 1e-6;
    }
    EXPECT_LT(losses::pce<double>(pred, s).value, 1e-5);
}

TEST(Pce, AllUnknownScribbleGivesZeroWithWarning) {
    const auto r = losses::pce<double>(constant(16, 0.3), ScribbleMap{Mask8(4, 4, 1, 0)});
    EXPECT_EQ(r.value, 0.0);
    EXPECT_TRUE(r.warning);
    for (double g : r.grad) EXPECT_EQ(g, 0.0);
}

TEST(Pce, MatchesPerPixelLoopOracle) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const ScribbleMap s = ts::random_scribble(12, 9, seed);
        const Vec pred = ts::uniform_vector(108, 0.0, 1.0, seed + 100);
        EXPECT_NEAR(losses::pce<double>(pred, s).value, ts::pce_loop(pred, s), 1e-6) << seed;
    }
}

TEST(Pce, SizeMismatchIsShapeError) {
    EXPECT_THROW(losses::pce<double>(constant(15, 0.5), ts::random_scribble(4, 4, 1)), ShapeError);
}

// ---------------------------------------------------------------------------
// local saliency coherence

TEST(Lsc, ConstantPredictionIsZero) {
    EXPECT_EQ(losses::lsc<double>(constant(256, 0.4), 16, 16, ts::random_rgb(16, 16, 1)).value, 0.0);
}

TEST(Lsc, StepOnFlatImageCostsMoreThanStepOnColourEdge) {
    for (int f : {1, 4}) {
        LossConfig cfg;
        cfg.lsc_downsample = f;
        const int side = 4 * f;
        const Vec p = step_pred(side, side);
        const double on_edge = losses::lsc<double>(p, side, side, edge_rgb(side, side), cfg).value;
        const double on_flat = losses::lsc<double>(p, side, side, flat_rgb(side, side), cfg).value;
        EXPECT_GT(on_flat, on_edge) << "factor " << f;
        EXPECT_GT(on_edge, -1e-15);
    }
}

TEST(Lsc, WiderColourKernelNeverDecreasesLoss) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Vec p = ts::uniform_vector(64, 0.0, 1.0, seed);
        const ImageF rgb = ts::random_rgb(8, 8, seed + 7);
        LossConfig narrow;
        narrow.lsc_downsample = 1;
        LossConfig wide = narrow;
        wide.sigma_rgb = 2 * narrow.sigma_rgb;
        EXPECT_GE(losses::lsc<double>(p, 8, 8, rgb, wide).value, losses::lsc<double>(p, 8, 8, rgb, narrow).value) << seed;
    }
}

TEST(Lsc, IndivisibleSizeIsShapeError) {
    EXPECT_THROW(losses::lsc<double>(constant(36, 0.5), 6, 6, flat_rgb(6, 6)), ShapeError);
}

// ---------------------------------------------------------------------------
// smoothness

TEST(Smoothness, SinglePairOnFlatImage) {
    const Vec p{0.0, 1.0};
    EXPECT_DOUBLE_EQ(losses::smoothness<double>(p, 1, 2, flat_rgb(1, 2)).value, 1.0);
}

TEST(Smoothness, ConstantPredictionIsZero) {
    EXPECT_EQ(losses::smoothness<double>(constant(64, 0.7), 8, 8, ts::random_rgb(8, 8, 3)).value, 0.0);
}

TEST(Smoothness, SharperImageEdgeGivesSmallerTerm) {
    const Vec p{0.2, 0.8};
    double last = 1e9;
    for (float contrast : {0.0f, 0.1f, 0.3f, 1.0f}) {
        ImageF img(1, 2, 3, 0.0f);
        for (int c = 0; c < 3; ++c) img(0, 1, c) = contrast;
        const double v = losses::smoothness<double>(p, 1, 2, img).value;
        EXPECT_LT(v, last);
        last = v;
    }
}

// ---------------------------------------------------------------------------
// weighted BCE and IoU

TEST(Wbce, ConstantPredictionEqualToTargetIsNearZero) {
    for (double v : {0.0, 1.0}) EXPECT_LT(losses::wbce<double>(constant(64, v), constant(64, v), 8, 8).value, 1e-5);
}

TEST(Wbce, HalfTargetReducesToPlainMeanBce) {
    const Vec p = ts::uniform_vector(64, 0.05, 0.95, 4);
    double plain = 0;
    for (double x : p) plain += -(0.5 * std::log(x) + 0.5 * std::log(1 - x));
    plain /= 64;
    EXPECT_NEAR(losses::wbce<double>(p, constant(64, 0.5), 8, 8).value, plain, 1e-12);
}

TEST(Wbce, FlippingOnePixelIncreasesLoss) {
    LossConfig cfg;
    cfg.weight_pool = 1;
    const Vec target{1, 0, 0, 0};
    const double exact = losses::wbce<double>(Vec{1, 0, 0, 0}, target, 2, 2, cfg).value;
    EXPECT_LT(exact, 1e-5);
    EXPECT_GT(losses::wbce<double>(Vec{1, 1, 0, 0}, target, 2, 2, cfg).value, exact + 1.0);
}

TEST(Wbce, BoundaryPixelsWeighMore) {
    Vec target(64, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) target[static_cast<std::size_t>(y * 8 + x)] = 1.0;
    LossConfig cfg;
    cfg.weight_pool = 3;
    const auto w = losses::boundary_weights<double>(target, 8, 8, cfg);
    EXPECT_GT(w[3 * 8 + 4], w[3 * 8 + 7]);
    EXPECT_DOUBLE_EQ(w[3 * 8 + 0], 1.0);
    EXPECT_THROW(losses::boundary_weights<double>(target, 8, 8, LossConfig{.weight_pool = 4}), ConfigError);
}

TEST(Wiou, AllOnesIsZero) { EXPECT_NEAR(losses::wiou<double>(constant(64, 1), constant(64, 1), 8, 8).value, 0.0, 1e-12); }

TEST(Wiou, ComplementIsOne) {
    const Vec g = binary_target(8, 8, 3);
    Vec p(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) p[i] = 1.0 - g[i];
    EXPECT_NEAR(losses::wiou<double>(p, g, 8, 8).value, 1.0, 1e-12);
}

TEST(Wiou, HalfOfBinaryTargetIsOneHalf) {
    const Vec g = binary_target(8, 8, 5);
    Vec p(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) p[i] = 0.5 * g[i];
    // constant weights: a uniform target gives a flat pooled map
    LossConfig cfg;
    cfg.boundary_weight = 0;
    EXPECT_NEAR(losses::wiou<double>(p, g, 8, 8, cfg).value, 0.5, 1e-6);
}

TEST(Wiou, BothEmptyIsZero) { EXPECT_EQ(losses::wiou<double>(constant(16, 0), constant(16, 0), 4, 4).value, 0.0); }

// ---------------------------------------------------------------------------
// gradients against central differences on random 8x8 inputs

class LossGradient : public ::testing::TestWithParam<std::uint64_t> {
protected:
    Vec pred = ts::uniform_vector(64, 0.05, 0.95, GetParam());
    Vec target = ts::uniform_vector(64, 0.0, 1.0, GetParam() + 1000);
    ImageF rgb = ts::random_rgb(8, 8, GetParam() + 2000);
    ScribbleMap scribble = ts::random_scribble(8, 8, GetParam() + 3000);
};

TEST_P(LossGradient, Pce) {
    auto f = [&](const Vec& x) { return losses::pce<double>(x, scribble).value; };
    expect_grad_ok(ts::check_gradient(f, pred, losses::pce<double>(pred, scribble).grad), "pce");
}

TEST_P(LossGradient, Lsc) {
    auto f = [&](const Vec& x) { return losses::lsc<double>(x, 8, 8, rgb).value; };
    expect_grad_ok(ts::check_gradient(f, pred, losses::lsc<double>(pred, 8, 8, rgb).grad), "lsc");
}

// Without downsampling, random pixels often tie within the difference step and
// the stencil straddles a kink of |p_i - p_j|. Those coordinates are skipped.
TEST_P(LossGradient, LscFullResolutionAwayFromKinks) {
    LossConfig cfg;
    cfg.lsc_downsample = 1;
    const double step = 1e-4;
    const auto analytic = losses::lsc<double>(pred, 8, 8, rgb, cfg).grad;
    int checked = 0, ok = 0;
    double worst = 0;
    for (int i = 0; i < 64; ++i) {
        bool near_kink = false;
        for (int j = 0; j < 64; ++j) {
            const int dy = i / 8 - j / 8, dx = i % 8 - j % 8;
            if (j != i && dy * dy + dx * dx <= cfg.lsc_radius * cfg.lsc_radius &&
                std::abs(pred[static_cast<std::size_t>(i)] - pred[static_cast<std::size_t>(j)]) <= 2 * step)
                near_kink = true;
        }
        if (near_kink) continue;
        Vec x = pred;
        x[static_cast<std::size_t>(i)] += step;
        const double up = losses::lsc<double>(x, 8, 8, rgb, cfg).value;
        x[static_cast<std::size_t>(i)] -= 2 * step;
        const double down = losses::lsc<double>(x, 8, 8, rgb, cfg).value;
        const double num = (up - down) / (2 * step), an = analytic[static_cast<std::size_t>(i)];
        const double rel = std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-12});
        ++checked;
        ok += rel <= 1e-3;
        worst = std::max(worst, rel);
    }
    EXPECT_GE(checked, 48);
    EXPECT_EQ(ok, checked);
    EXPECT_LE(worst, 1e-3);
}

TEST_P(LossGradient, Smoothness) {
    auto f = [&](const Vec& x) { return losses::smoothness<double>(x, 8, 8, rgb).value; };
    expect_grad_ok(ts::check_gradient(f, pred, losses::smoothness<double>(pred, 8, 8, rgb).grad), "smoothness");
}

TEST_P(LossGradient, Wbce) {
    auto f = [&](const Vec& x) { return losses::wbce<double>(x, target, 8, 8).value; };
    expect_grad_ok(ts::check_gradient(f, pred, losses::wbce<double>(pred, target, 8, 8).grad), "wbce");
}

TEST_P(LossGradient, Wiou) {
    auto f = [&](const Vec& x) { return losses::wiou<double>(x, target, 8, 8).value; };
    expect_grad_ok(ts::check_gradient(f, pred, losses::wiou<double>(pred, target, 8, 8).grad), "wiou");
}

TEST_P(LossGradient, AllLossesNonnegativeAndFinite) {
    LossConfig cfg;
    cfg.lsc_downsample = 2;
    const Vec extreme = ts::uniform_vector(64, 0.0, 1.0, GetParam() + 4000);
    for (const Vec* p : {static_cast<const Vec*>(&pred), &extreme}) {
        const double vals[] = {losses::pce<double>(*p, scribble, cfg).value, losses::lsc<double>(*p, 8, 8, rgb, cfg).value,
                               losses::smoothness<double>(*p, 8, 8, rgb, cfg).value,
                               losses::wbce<double>(*p, target, 8, 8, cfg).value, losses::wiou<double>(*p, target, 8, 8, cfg).value};
        for (double v : vals) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
        }
        EXPECT_LE(vals[4], 1.0);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradient, ::testing::Range<std::uint64_t>(0, 10));

// ---------------------------------------------------------------------------
// combined objective

TEST(Objective, EqualBranchesGiveNearZeroConsistency) {
    const int side = 16;
    Tape t;
    Vec raw = binary_target(side, side, 9);
    Matrix col(side * side, 1);
    for (std::size_t i = 0; i < raw.size(); ++i) col[i] = raw[i] > 0.5 ? 1.0f - 1e-6f : 1e-6f;
    SiameseOutput out{t.constant(col), t.constant(col)};
    const ScribbleMap s = ts::random_scribble(side, side, 3);
    const ObjectiveTerms terms = objective(out, s, ts::random_rgb(side, side, 2));
    EXPECT_LT(terms.values.consistency(), 1e-4);
    EXPECT_NEAR(terms.values.total, terms.values.scribble(), 1e-4);
    EXPECT_NEAR(terms.total.value()(0, 0), terms.values.total, 1e-4);
    EXPECT_TRUE(terms.values.finite());
}

TEST(Objective, BreakdownSerialises) {
    LossBreakdown b;
    b.pce = 1;
    b.wiou = 0.5;
    b.total = 1.5;
    const auto j = to_json(b);
    EXPECT_EQ(j.at("pce"), 1.0);
    EXPECT_EQ(j.at("total"), 1.5);
    EXPECT_TRUE(j.contains("lsc") && j.contains("sl") && j.contains("wbce"));
}

TEST(Objective, GuideSizeMismatchIsShapeError) {
    Tape t;
    SiameseOutput out{t.constant(Matrix(64, 1, 0.5f)), t.constant(Matrix(64, 1, 0.5f))};
    EXPECT_THROW(objective(out, ts::random_scribble(8, 8, 1), ts::random_rgb(4, 4, 1)), ShapeError);
}
