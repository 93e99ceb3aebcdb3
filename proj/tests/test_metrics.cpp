#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ngsr/image.hpp"
#include "ngsr/metrics.hpp"
#include "ngsr/microfit.hpp"

using namespace ngsr;

namespace {

nlohmann::json load_fixture(const std::string& name) {
    std::ifstream f(std::string(NGSR_TEST_DATA) + "/" + name);
    if (!f) throw std::runtime_error("missing fixture " + name);
    return nlohmann::json::parse(f);
}

ImageBuffer from_hwc(const std::vector<double>& v, int64_t h, int64_t w) {
    ImageBuffer img(h, w, 3);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(v[static_cast<size_t>((y * w + x) * 3 + c)]);
    return img;
}

ImageBuffer from_levels(const std::vector<int>& v, int64_t h, int64_t w) {
    ImageBuffer img(h, w, 1, ColorTag::Y);
    for (size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(v[i]) / 255.0f;
    return img;
}

ImageBuffer random_image(std::mt19937_64& rng, int64_t h, int64_t w) {
    ImageBuffer img(h, w, 3);
    std::uniform_real_distribution<float> ud(0.0f, 1.0f);
    for (float& v : img.data) v = ud(rng);
    return img;
}

}  // namespace

TEST(Bicubic, MatchesReferenceOnTwentyImages) {
    const auto cases = load_fixture("bicubic_reference.json").at("cases");
    ASSERT_EQ(cases.size(), 20u);
    for (const auto& c : cases) {
        const ImageBuffer in = from_hwc(c.at("input_hwc").get<std::vector<double>>(), c.at("height"), c.at("width"));
        const ImageBuffer out = bicubic_resize(in, c.at("scale").get<double>());
        ASSERT_EQ(out.height, c.at("out_height").get<int64_t>()) << c.at("name");
        ASSERT_EQ(out.width, c.at("out_width").get<int64_t>()) << c.at("name");
        const ImageBuffer expect =
            from_hwc(c.at("expected_hwc").get<std::vector<double>>(), out.height, out.width);
        double worst = 0.0;
        for (size_t i = 0; i < out.data.size(); ++i)
            worst = std::max(worst, static_cast<double>(std::fabs(out.data[i] - expect.data[i])));
        EXPECT_LE(worst, 1e-4) << c.at("name");
    }
}

TEST(Bicubic, ConstantImageStaysConstant) {
    for (double s : {0.25, 1.0 / 3.0, 0.5, 1.0, 2.0, 3.0, 4.0}) {
        const ImageBuffer out = bicubic_resize(ImageBuffer(12, 12, 3, ColorTag::RGB, 0.37f), s);
        for (float v : out.data) EXPECT_NEAR(v, 0.37f, 1e-6) << "scale " << s;
    }
}

TEST(Bicubic, ScaleOneIsIdentity) {
    std::mt19937_64 rng(1);
    const ImageBuffer img = random_image(rng, 9, 13);
    const ImageBuffer out = bicubic_resize(img, 1.0);
    ASSERT_EQ(out.height, 9);
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(out.data[i], img.data[i], 1e-6);
}

TEST(Bicubic, OutputExtents) {
    const ImageBuffer img(256, 256, 3);
    EXPECT_EQ(bicubic_resize(img, 0.25).height, 64);
    EXPECT_EQ(bicubic_resize(ImageBuffer(10, 7, 3), 1.0 / 3.0).width, 3);
    EXPECT_EQ(bicubic_resize(ImageBuffer(10, 7, 3), 3.0).width, 21);
}

TEST(RgbToY, StudioSwingValues) {
    ImageBuffer img(1, 3, 3);
    img.at(0, 0, 1) = img.at(1, 0, 1) = img.at(2, 0, 1) = 1.0f;
    img.at(1, 0, 2) = 1.0f;
    const ImageBuffer y = rgb_to_y(img);
    EXPECT_NEAR(y.at(0, 0, 0), 16.0 / 255.0, 1e-7);
    EXPECT_NEAR(y.at(0, 0, 1), 235.0 / 255.0, 1e-6);
    EXPECT_NEAR(y.at(0, 0, 2), (128.553 + 16.0) / 255.0, 1e-6);
}

TEST(Psnr, IdenticalIsInfinite) {
    std::mt19937_64 rng(2);
    const ImageBuffer img = random_image(rng, 16, 16);
    EXPECT_TRUE(std::isinf(psnr(img, img, 0)));
}

TEST(Psnr, UniformOneLevelDifference) {
    ImageBuffer a(16, 16, 1, ColorTag::Y, 100.0f / 255.0f), b(16, 16, 1, ColorTag::Y, 101.0f / 255.0f);
    EXPECT_NEAR(psnr(a, b, 0), 48.1308, 1e-3);
    EXPECT_NEAR(psnr(a, b, 0), 20.0 * std::log10(255.0), 1e-9);
}

TEST(Psnr, MatchesDirectFormula) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        const ImageBuffer a = random_image(rng, 20, 24), b = random_image(rng, 20, 24);
        const int64_t crop = rep % 3;
        const ImageBuffer ya = rgb_to_y(a), yb = rgb_to_y(b);
        double se = 0.0;
        int64_t n = 0;
        for (int64_t y = crop; y < 20 - crop; ++y)
            for (int64_t x = crop; x < 24 - crop; ++x) {
                const double d = std::floor(ya.at(0, y, x) * 255.0 + 0.5) - std::floor(yb.at(0, y, x) * 255.0 + 0.5);
                se += d * d;
                ++n;
            }
        EXPECT_NEAR(psnr(a, b, crop), 10.0 * std::log10(255.0 * 255.0 * n / se), 1e-6);
    }
}

TEST(Psnr, RejectsMismatchedExtents) {
    EXPECT_THROW(psnr(ImageBuffer(8, 8, 3), ImageBuffer(8, 9, 3), 0), ShapeError);
    EXPECT_THROW(psnr(ImageBuffer(8, 8, 3), ImageBuffer(8, 8, 3), 4), ShapeError);
}

TEST(Ssim, IdenticalIsOne) {
    std::mt19937_64 rng(4);
    const ImageBuffer img = random_image(rng, 32, 32);
    EXPECT_NEAR(ssim(img, img, 0), 1.0, 1e-12);
    EXPECT_NEAR(ssim(img, img, 4), 1.0, 1e-12);
}

TEST(Ssim, MatchesReferenceImplementation) {
    for (const auto& c : load_fixture("metric_reference.json").at("cases")) {
        const int64_t h = c.at("height"), w = c.at("width"), crop = c.at("crop");
        const ImageBuffer a = from_levels(c.at("a_levels").get<std::vector<int>>(), h, w);
        const ImageBuffer b = from_levels(c.at("b_levels").get<std::vector<int>>(), h, w);
        EXPECT_NEAR(ssim(a, b, crop), c.at("ssim").get<double>(), 1e-5) << c.at("name");
        EXPECT_NEAR(psnr(a, b, crop), c.at("psnr").get<double>(), 1e-6) << c.at("name");
    }
}

TEST(Ssim, NegativeScoresLow) {
    const auto cases = load_fixture("metric_reference.json").at("cases");
    const auto& c = cases.at(0);
    ASSERT_EQ(c.at("name"), "negative");
    const ImageBuffer a = from_levels(c.at("a_levels").get<std::vector<int>>(), c.at("height"), c.at("width"));
    const ImageBuffer b = from_levels(c.at("b_levels").get<std::vector<int>>(), c.at("height"), c.at("width"));
    EXPECT_LT(ssim(a, b, 0), 0.5);
}

TEST(Ssim, RejectsSmallImages) { EXPECT_THROW(ssim(ImageBuffer(12, 12, 3), ImageBuffer(12, 12, 3), 1), ShapeError); }

TEST(Normalize, RoundTripAndArithmetic) {
    std::mt19937_64 rng(5);
    const ImageBuffer img = random_image(rng, 7, 5);
    EXPECT_EQ(normalize(img, NormStats::neutral()).data().size(), img.data.size());
    const Tensor n0 = normalize(img, NormStats::neutral());
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(n0[static_cast<int64_t>(i)], img.data[i]);
    NormStats s;
    s.mean = {0.5f, 0.5f, 0.5f};
    s.std = {0.5f, 0.5f, 0.5f};
    ImageBuffer px(1, 1, 3, ColorTag::RGB, 0.75f);
    EXPECT_FLOAT_EQ(normalize(px, s)[0], 0.5f);
    s.mean = {0.45f, 0.44f, 0.40f};
    s.std = {0.28f, 0.27f, 0.29f};
    const ImageBuffer back = denormalize(normalize(img, s), s);
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-6);
    s.std[1] = 0.0f;
    EXPECT_THROW(normalize(img, s), ImageError);
}

TEST(L1Loss, MeanAbsoluteDifference) {
    EXPECT_DOUBLE_EQ(l1_loss(Tensor({4}, {0, 0, 0, 0}), Tensor({4}, {1, -1, 2, 0})), 1.0);
    EXPECT_EQ(l1_loss(Tensor({2, 2}, 3.0f), Tensor({2, 2}, 3.0f)), 0.0);
    EXPECT_THROW(l1_loss(Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Png, RoundTripPreservesLevels) {
    ImageBuffer img(5, 6, 3);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
    const std::string path = ::testing::TempDir() + "ngsr_roundtrip.png";
    write_png(img, path);
    const ImageBuffer back = read_png(path);
    std::remove(path.c_str());
    ASSERT_EQ(back.height, 5);
    ASSERT_EQ(back.width, 6);
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(to_u8(back.data[i]), to_u8(img.data[i]));
    EXPECT_THROW(read_png("/nonexistent/none.png"), ImageError);
}

TEST(Microfit, ReducesLossByHalf) {
    const MicrofitResult r = microfit(SpsaOptions{}, synthetic_patch(32), ModelConfig::micro(2));
    ASSERT_EQ(r.losses.size(), 301u);
    EXPECT_FALSE(r.diverged);
    EXPECT_LE(r.final_loss(), 0.5 * r.initial()) << r.initial() << " -> " << r.final_loss();
}
