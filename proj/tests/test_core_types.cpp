#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "prefseg/feature_provider.hpp"
#include "prefseg/manifest.hpp"
#include "prefseg/pnm.hpp"
#include "prefseg/tensor.hpp"
#include "support.hpp"

using namespace prefseg;
using testsupport::TempDir;

TEST(Tensor, RejectsLengthMismatch) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    EXPECT_THROW(Tensor({2, 0}), ShapeError);
}

TEST(Tensor, Pft1RoundTripIsBitExact) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1e6f, 1e6f);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> dims;
        const int rank = 1 + int(rng() % 4);
        for (int i = 0; i < rank; ++i) dims.push_back(1 + rng() % 5);
        Tensor t(dims);
        for (auto& v : t.data()) v = u(rng);
        t[0] = -0.0f;
        t[t.size() - 1] = std::numeric_limits<float>::denorm_min();
        std::stringstream ss;
        pft1::write(ss, t);
        const Tensor back = pft1::read(ss);
        ASSERT_EQ(back.dims(), t.dims());
        EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(float)), 0);
    }
}

TEST(Tensor, Pft1ByteLayout) {
    Tensor t({1, 2}, std::vector<float>{1.0f, -2.0f});
    std::stringstream ss;
    pft1::write(ss, t);
    const std::string s = ss.str();
    ASSERT_EQ(s.size(), 4u + 2 + 2 * 4 + 2 * 4);
    EXPECT_EQ(s.substr(0, 4), "PFT1");
    EXPECT_EQ(s[4], 1);
    EXPECT_EQ(s[5], 2);
    EXPECT_EQ(std::string(s.data() + 6, 4), std::string("\x01\x00\x00\x00", 4));
    EXPECT_EQ(std::string(s.data() + 10, 4), std::string("\x02\x00\x00\x00", 4));
    EXPECT_EQ(std::string(s.data() + 14, 4), std::string("\x00\x00\x80\x3f", 4));
    EXPECT_EQ(std::string(s.data() + 18, 4), std::string("\x00\x00\x00\xc0", 4));
}

TEST(Tensor, Pft1RejectsCorruptStreams) {
    std::stringstream bad_magic("XFT1\x01\x01\x01\x00\x00\x00");
    EXPECT_THROW(pft1::read(bad_magic), IoError);
    Tensor t({3}, std::vector<float>{1, 2, 3});
    std::stringstream ss;
    pft1::write(ss, t);
    std::string s = ss.str();
    std::stringstream truncated(s.substr(0, s.size() - 2));
    EXPECT_THROW(pft1::read(truncated), IoError);
    s[4] = 2;
    std::stringstream wrong_dtype(s);
    EXPECT_THROW(pft1::read(wrong_dtype), IoError);
}

TEST(Mask, ValidatesShapeAndValues) {
    EXPECT_THROW(Mask(2, 2, std::vector<std::uint8_t>{0, 1, 0}), ShapeError);
    EXPECT_THROW(Mask(2, 2, std::vector<std::uint8_t>{0, 1, 2, 0}), ValidationError);
    EXPECT_THROW(Mask(0, 4), ShapeError);
    Mask m(2, 3);
    m.set(1, 2, true);
    EXPECT_EQ(m.count(), 1);
    EXPECT_EQ(m.at(1, 2), 1);
}

TEST(PixelToPatch, Examples) {
    EXPECT_EQ(pixel_to_patch(0, 0, 8, 64, 64), (PatchIndex{0, 0}));
    EXPECT_EQ(pixel_to_patch(15, 7, 8, 64, 64), (PatchIndex{1, 0}));
    EXPECT_EQ(pixel_to_patch(63, 63, 8, 64, 64), (PatchIndex{7, 7}));
}

TEST(PixelToPatch, OutOfBoundsThrows) {
    EXPECT_THROW(pixel_to_patch(64, 0, 8, 64, 64), ValidationError);
    EXPECT_THROW(pixel_to_patch(0, -1, 8, 64, 64), ValidationError);
    EXPECT_THROW(pixel_to_patch(0, 0, 0, 64, 64), ValidationError);
}

TEST(PixelToPatch, TotalAndSurjective) {
    for (int ps : {1, 2, 4, 8}) {
        const int h = 4 * ps * 2, w = 3 * ps * 2;
        std::set<std::pair<int, int>> hit;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const auto p = pixel_to_patch(r, c, ps, h, w);
                ASSERT_EQ(p.row, r / ps);
                ASSERT_EQ(p.col, c / ps);
                hit.insert({p.row, p.col});
            }
        EXPECT_EQ(hit.size(), std::size_t(h / ps) * (w / ps));
    }
}

TEST(PatchMajority, TieIsBackground) {
    Mask m(4, 4);
    m.set(0, 0, true);
    m.set(0, 1, true);  // 2 of 4 in patch (0,0)
    m.set(2, 2, true);
    m.set(2, 3, true);
    m.set(3, 2, true);  // 3 of 4 in patch (1,1)
    const auto lab = patch_majority(m, 2);
    EXPECT_EQ(lab, (std::vector<std::uint8_t>{0, 0, 0, 1}));
    const Mask e = expand_patches(lab, 2, 2, 2);
    EXPECT_EQ(e.count(), 4);
    EXPECT_EQ(e.at(3, 3), 1);
}

TEST(Pnm, RoundTripImageAndMask) {
    TempDir dir("pnm");
    Tensor img({3, 2, 2}, std::vector<float>{0, 1, 0.5f, 0.25f, 1, 1, 0, 0, 0.2f, 0.4f, 0.6f, 0.8f});
    pnm::save_image(dir / "a.ppm", img);
    const Tensor back = pnm::load_image(dir / "a.ppm");
    ASSERT_EQ(back.dims(), img.dims());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-6);

    Mask m(3, 5);
    m.set(1, 4, true);
    pnm::save_mask(dir / "m.pgm", m);
    EXPECT_EQ(pnm::load_mask(dir / "m.pgm"), m);
    const std::string bytes = pnm::mask_to_bytes(m);
    EXPECT_EQ(bytes.substr(0, 3), "P5\n");
    EXPECT_NE(bytes.find('\xff'), std::string::npos);
}

namespace {

SyntheticWorldConfig small_world(std::uint64_t seed = 11) {
    SyntheticWorldConfig w;
    w.name = "tiny";
    w.image_size = 32;
    w.patch_size = 8;
    w.feature_dim = 8;
    w.seed = seed;
    return w;
}

void write_pgm(const std::filesystem::path& p, int w, int h, std::uint8_t fill) {
    pnm::Raster r{1, h, w, std::vector<std::uint8_t>(std::size_t(w) * h, fill)};
    pnm::save_raster(p, r);
}

// Scales one patch vector of a stored feature file to the given norm.
void corrupt_feature_norm(const std::filesystem::path& file, int patch, float norm) {
    Tensor t = pft1::load(file);
    const std::size_t d = t.dim(2);
    for (std::size_t i = 0; i < d; ++i) t[patch * d + i] *= norm;
    pft1::save(file, t);
}

}  // namespace

TEST(Manifest, LoadsThreeGeneratedRecords) {
    TempDir dir("man");
    const auto data = generate_world(small_world(), 3, dir.path());
    const auto loaded = load_manifest(dir / "manifest.json");
    ASSERT_EQ(loaded.records.size(), 3u);
    EXPECT_EQ(loaded.patch_size, 8);
    EXPECT_TRUE(loaded.has_ground_truth());
    for (const auto& r : loaded.records) {
        EXPECT_EQ(r.features.grid_h(), 4);
        EXPECT_FALSE(r.features.first_non_unit().has_value());
    }
    EXPECT_EQ(data.records[1].id, loaded.records[1].id);
}

TEST(Manifest, MaskImageDimensionMismatch) {
    TempDir dir("mm");
    write_pgm(dir / "img.pgm", 63, 64, 100);
    write_pgm(dir / "mask.pgm", 64, 64, 0);
    pft1::save(dir / "f.pft", Tensor({8, 8, 2}));
    write_manifest(dir / "manifest.json", "x", 8, {{"r0", "img.pgm", "mask.pgm", "f.pft"}});
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("r0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("dimension mismatch"), std::string::npos) << msg;
    }
}

TEST(Manifest, NonUnitFeatureNamesRecord) {
    TempDir dir("nu");
    generate_world(small_world(), 3, dir.path());
    corrupt_feature_norm(dir / "features/img_001.pft", 5, 0.5f);
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("img_001"), std::string::npos) << msg;
        EXPECT_NE(msg.find("unit norm"), std::string::npos) << msg;
    }
}

TEST(Manifest, MissingFileAndDuplicateIds) {
    TempDir dir("dup");
    EXPECT_THROW(load_manifest(dir / "nope.json"), IoError);
    generate_world(small_world(), 2, dir.path());
    auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    j["records"][1]["id"] = j["records"][0]["id"];
    std::ofstream(dir / "dup.json") << j.dump();
    EXPECT_THROW(load_manifest(dir / "dup.json"), ValidationError);
}

// Random corruption property: each corruption kind breaks exactly one
// record invariant, so the manifest must be rejected iff a corruption was applied.
TEST(Manifest, AcceptsIffEveryRecordValid) {
    TempDir base("prop");
    generate_world(small_world(5), 3, base / "clean");
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 24; ++trial) {
        const auto dir = base / ("t" + std::to_string(trial));
        std::filesystem::copy(base / "clean", dir, std::filesystem::copy_options::recursive);
        const int kind = int(rng() % 6);  // 0 = leave intact
        const int rec = int(rng() % 3);
        char name[32];
        std::snprintf(name, sizeof name, "img_%03d", rec);
        const auto feat = dir / "features" / (std::string(name) + ".pft");
        switch (kind) {
            case 1: corrupt_feature_norm(feat, int(rng() % 16), 0.5f + 0.1f * float(rng() % 3)); break;
            case 2: pft1::save(feat, Tensor({3, 4, 8}, 0.5f)); break;  // wrong grid
            case 3: write_pgm(dir / "masks" / (std::string(name) + ".pgm"), 32, 24, 0); break;
            case 4: write_pgm(dir / "images" / (std::string(name) + ".pgm"), 30, 32, 9); break;
            case 5: std::filesystem::remove(feat); break;
            default: break;
        }
        if (kind == 0) {
            EXPECT_NO_THROW(load_manifest(dir / "manifest.json")) << "trial " << trial;
        } else {
            EXPECT_THROW(load_manifest(dir / "manifest.json"), Error) << "trial " << trial << " kind " << kind;
        }
    }
}
