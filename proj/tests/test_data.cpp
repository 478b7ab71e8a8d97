#include <gtest/gtest.h>

#include "support.hpp"

using namespace ssfam;
namespace ts = testing_support;

namespace {

DatasetManifest make_pair_dataset(const fs::path& root, int rgb_h, int rgb_w, int depth_h, int depth_w) {
    DatasetManifest m;
    m.root = root;
    m.split = Split::train;
    m.modalities = ModalitySet{Modality::visible, Modality::depth};
    m.ids = {"a"};
    io::write_png8(m.modality_path(Modality::visible, "a"), Mask8(rgb_h, rgb_w, 3, 100));
    io::write_png8(m.modality_path(Modality::depth, "a"), Mask8(depth_h, depth_w, 1, 50));
    Mask8 scr(rgb_h, rgb_w, 1, 0);
    scr(1, 1) = 1;
    scr(5, 5) = 2;
    io::write_png8(m.scribble_path("a"), scr);
    return m;
}

}  // namespace

TEST(ScribbleMap, RejectsValuesOutsideTriValuedCode) {
    Mask8 m(4, 4, 1, 0);
    m(2, 3) = 3;
    EXPECT_THROW(ScribbleMap{m}, EncodingError);
    m(2, 3) = 2;
    EXPECT_NO_THROW(ScribbleMap{m});
}

TEST(LoadSample, RgbAndDepthGiveTwoThreeChannelModalities) {
    const auto root = ts::scratch_dir("load_rgbd");
    const auto m = make_pair_dataset(root, 64, 64, 64, 64);
    const Sample s = load_sample(m, "a");
    ASSERT_EQ(s.modalities.size(), 2u);
    for (const auto& [mod, img] : s.modalities) {
        EXPECT_EQ(img.height(), 64);
        EXPECT_EQ(img.width(), 64);
        EXPECT_EQ(img.channels(), 3);
        for (float v : img.data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
    // grey depth replicated into all three channels
    const ImageF& d = s.modalities.at(Modality::depth);
    EXPECT_FLOAT_EQ(d(3, 3, 0), 50.0f / 255.0f);
    EXPECT_FLOAT_EQ(d(3, 3, 2), 50.0f / 255.0f);
    EXPECT_EQ(s.scribble(1, 1), 1);
    EXPECT_EQ(s.scribble(5, 5), 2);
}

TEST(LoadSample, SizeMismatchIsAlignmentError) {
    const auto root = ts::scratch_dir("load_align");
    const auto m = make_pair_dataset(root, 64, 64, 32, 64);
    EXPECT_THROW(load_sample(m, "a"), AlignmentError);
}

TEST(LoadSample, MissingFileIsMissingModality) {
    const auto root = ts::scratch_dir("load_missing");
    const auto m = make_pair_dataset(root, 64, 64, 64, 64);
    fs::remove(m.modality_path(Modality::depth, "a"));
    EXPECT_THROW(load_sample(m, "a"), MissingModality);
}

TEST(LoadSample, ScribbleValueThreeIsEncodingError) {
    const auto root = ts::scratch_dir("load_enc");
    const auto m = make_pair_dataset(root, 64, 64, 64, 64);
    Mask8 scr(64, 64, 1, 0);
    scr(0, 0) = 3;
    io::write_png8(m.scribble_path("a"), scr);
    EXPECT_THROW(load_sample(m, "a"), EncodingError);
}

TEST(LoadSample, TestSplitDoesNotNeedScribbles) {
    const auto root = ts::scratch_dir("load_test_split");
    auto m = make_pair_dataset(root, 64, 64, 64, 64);
    fs::remove(m.scribble_path("a"));
    EXPECT_THROW(load_sample(m, "a"), MissingModality);
    m.split = Split::test;
    EXPECT_NO_THROW(load_sample(m, "a"));
}

TEST(Preprocess, SameSideKeepsGeometry) {
    const auto root = ts::scratch_dir("pre_same");
    const auto m = make_pair_dataset(root, 64, 64, 64, 64);
    PreprocessConfig pc;
    pc.side = 64;
    const Sample s = preprocess(load_sample(m, "a"), pc);
    EXPECT_EQ(s.height(), 64);
    EXPECT_EQ(s.scribble.height(), 64);
    // normalisation (v - 0.5) / 0.5
    EXPECT_NEAR(s.modalities.at(Modality::visible)(0, 0, 0), (100.0 / 255.0 - 0.5) / 0.5, 1e-6);
    EXPECT_NEAR(s.guide(0, 0, 0), 100.0 / 255.0, 1e-6);
}

TEST(Preprocess, DownsizeKeepsScribbleTriValued) {
    const auto root = ts::scratch_dir("pre_down");
    const auto m = make_pair_dataset(root, 128, 128, 128, 128);
    Sample raw = load_sample(m, "a");
    raw.scribble = ts::random_scribble(128, 128, 5);
    PreprocessConfig pc;
    pc.side = 64;
    const Sample s = preprocess(raw, pc);
    EXPECT_EQ(s.scribble.height(), 64);
    for (auto v : s.scribble.raster().data()) EXPECT_LE(v, 2);
}

TEST(Preprocess, SideNotDivisibleByPatchIsConfigError) {
    PreprocessConfig pc;
    pc.side = 100;
    EXPECT_THROW(pc.validate(), ConfigError);
    pc.side = 64;
    pc.patch = 48;
    EXPECT_THROW(pc.validate(), ConfigError);
}

TEST(Preprocess, NanPixelIsRejected) {
    Sample s;
    s.id = "nan";
    ImageF img(64, 64, 3, 0.5f);
    img(3, 3, 1) = std::nanf("");
    s.modalities.emplace(Modality::visible, img);
    s.guide = img;
    PreprocessConfig pc;
    pc.side = 64;
    EXPECT_THROW(preprocess(s, pc), PreconditionError);
}

TEST(Resize, NearestPreservesLabelSetOnRandomScribbles) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ScribbleMap s = ts::random_scribble(37 + static_cast<int>(seed), 53, seed);
        for (int side : {16, 64, 128}) {
            const Mask8 r = resize_nearest(s.raster(), side, side);
            EXPECT_NO_THROW(ScribbleMap{r});
        }
    }
}

TEST(Manifest, JsonRoundTrip) {
    DatasetManifest m;
    m.root = "/data/x";
    m.split = Split::test;
    m.modalities = ModalitySet{Modality::visible, Modality::thermal};
    m.ids = {"b", "a", "c"};
    const DatasetManifest back = manifest_from_json(to_json(m));
    EXPECT_EQ(back.root, m.root);
    EXPECT_EQ(back.split, m.split);
    EXPECT_EQ(back.modalities, m.modalities);
    EXPECT_EQ(back.ids, m.ids);
    EXPECT_THROW(manifest_from_json(nlohmann::json{{"root", "."}}), ManifestError);
}

TEST(Synth, WritesRequestedSamplesAndReloads) {
    const auto root = ts::scratch_dir("synth_basic");
    SynthConfig cfg;
    const auto m = synth_dataset(root, cfg);
    EXPECT_EQ(m.count(), 8u);
    const auto loaded = load_manifest(root);
    EXPECT_EQ(loaded.ids, m.ids);
    EXPECT_EQ(fs::weakly_canonical(loaded.root), fs::weakly_canonical(root));
    const Sample s = load_sample(loaded, m.ids.front());
    EXPECT_EQ(s.modalities.size(), 3u);
    ASSERT_TRUE(s.gt.has_value());
}

TEST(Synth, SameSeedGivesByteIdenticalFiles) {
    const auto a = ts::scratch_dir("synth_det_a");
    const auto b = ts::scratch_dir("synth_det_b");
    SynthConfig cfg;
    synth_dataset(a, cfg);
    synth_dataset(b, cfg);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        ASSERT_TRUE(fs::exists(b / rel)) << rel;
        EXPECT_EQ(ts::read_bytes(e.path()), ts::read_bytes(b / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, 8u * 5u + 1u);
}

TEST(Synth, DifferentSeedChangesContent) {
    const auto a = ts::scratch_dir("synth_seed_a");
    const auto b = ts::scratch_dir("synth_seed_b");
    SynthConfig cfg;
    synth_dataset(a, cfg);
    cfg.seed = 8;
    synth_dataset(b, cfg);
    EXPECT_NE(ts::read_bytes(a / "rgb" / "synth_0000.png"), ts::read_bytes(b / "rgb" / "synth_0000.png"));
}

TEST(Synth, ScribblesRespectGroundTruthExhaustively) {
    const auto root = ts::scratch_dir("synth_scan");
    SynthConfig cfg;
    cfg.n = 24;
    cfg.seed = 11;
    const auto m = synth_dataset(root, cfg);
    for (const auto& id : m.ids) {
        const Sample s = load_sample(m, id);
        ASSERT_TRUE(s.gt);
        EXPECT_GT(s.scribble.count(ScribbleCode::foreground), 0u) << id;
        EXPECT_GT(s.scribble.count(ScribbleCode::background), 0u) << id;
        for (int y = 0; y < s.scribble.height(); ++y)
            for (int x = 0; x < s.scribble.width(); ++x) {
                if (s.scribble(y, x) == 1) EXPECT_EQ((*s.gt)(y, x), 1) << id << " fg at " << x << "," << y;
                if (s.scribble(y, x) == 2) EXPECT_EQ((*s.gt)(y, x), 0) << id << " bg at " << x << "," << y;
            }
    }
}

TEST(Synth, ModalitySubsetOnlyWritesRequestedFolders) {
    const auto root = ts::scratch_dir("synth_vt");
    SynthConfig cfg;
    cfg.n = 2;
    cfg.modalities = ModalitySet{Modality::visible, Modality::thermal};
    const auto m = synth_dataset(root, cfg);
    EXPECT_FALSE(fs::exists(root / "depth"));
    EXPECT_TRUE(fs::exists(root / "thermal" / "synth_0001.png"));
    EXPECT_EQ(load_sample(m, "synth_0000").modalities.size(), 2u);
}

TEST(Synth, ZeroSamplesIsPreconditionError) {
    SynthConfig cfg;
    cfg.n = 0;
    EXPECT_THROW(synth_dataset(ts::scratch_dir("synth_zero"), cfg), PreconditionError);
}

TEST(Synth, UnwritableRootIsIoError) {
    const auto dir = ts::scratch_dir("synth_io");
    std::ofstream(dir / "file") << "x";
    SynthConfig cfg;
    cfg.n = 1;
    EXPECT_THROW(synth_dataset(dir / "file" / "sub", cfg), IoError);
}
