#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "pffnet/error.hpp"
#include "pffnet/metrics.hpp"
#include "synthetic.hpp"

using namespace pffnet;

namespace {

ImageBuffer constant(std::size_t h, std::size_t w, float v) { return ImageBuffer(h, w, 3, v); }

ImageBuffer noisy(const ImageBuffer& img, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    ImageBuffer out = img;
    for (float& v : out.pixels) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
    return out;
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
    const ImageBuffer a = synth::random_image(8, 8, 3, 1);
    const Psnr p = psnr(a, a);
    EXPECT_TRUE(p.infinite);
    EXPECT_EQ(p.str(), "inf");
}

TEST(Psnr, ConstantDifferenceIsTwentyDb) {
    const Psnr p = psnr(constant(16, 16, 0.6f), constant(16, 16, 0.5f));
    ASSERT_FALSE(p.infinite);
    // 0.6f - 0.5f is 0.1 only to float precision.
    EXPECT_NEAR(p.db, 20.0, 1e-5);
    EXPECT_EQ(p.str(), "20.0000");
    ImageBuffer a(4, 4, 1, 0.0f), b(4, 4, 1, 0.0f);
    for (std::size_t i = 0; i < 16; ++i) a.pixels[i] = (i % 2) ? 0.125f : 0.0f;
    // mse = 0.125^2 / 2, exact in binary.
    EXPECT_DOUBLE_EQ(psnr(a, b).db, 10.0 * std::log10(2.0 / (0.125 * 0.125)));
}

TEST(Psnr, PeakScales) {
    const double at1 = psnr(constant(4, 4, 0.6f), constant(4, 4, 0.5f)).db;
    const double at2 = psnr(constant(4, 4, 0.6f), constant(4, 4, 0.5f), 2.0).db;
    EXPECT_NEAR(at2 - at1, 20.0 * std::log10(2.0), 1e-9);
}

TEST(Psnr, MatchesNaiveOracle) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ImageBuffer a = synth::random_image(13, 17, 3, 2 * s);
        const ImageBuffer b = synth::random_image(13, 17, 3, 2 * s + 1);
        EXPECT_NEAR(psnr(a, b).db, oracle::psnr(a, b), 1e-9);
    }
    ImageBuffer a(8, 8, 3, 0.2f), b(8, 8, 3, 0.2f);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            for (std::size_t c = 0; c < 3; ++c) b.at(y, x, c) = ((x + y) % 2) ? 0.9f : 0.1f;
    EXPECT_NEAR(psnr(a, b).db, oracle::psnr(a, b), 1e-9);
}

TEST(Psnr, PermutationInvariant) {
    ImageBuffer a = synth::random_image(9, 9, 3, 3), b = synth::random_image(9, 9, 3, 4);
    const double before = psnr(a, b).db;
    std::mt19937_64 rng(5);
    std::vector<std::size_t> order(a.pixels.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    ImageBuffer pa = a, pb = b;
    for (std::size_t i = 0; i < order.size(); ++i) {
        pa.pixels[i] = a.pixels[order[i]];
        pb.pixels[i] = b.pixels[order[i]];
    }
    EXPECT_NEAR(psnr(pa, pb).db, before, 1e-9);
}

TEST(Psnr, DimMismatchThrows) {
    EXPECT_THROW(psnr(ImageBuffer(4, 4, 3), ImageBuffer(4, 5, 3)), ShapeError);
}

TEST(Ssim, KernelIsNormalizedGaussian) {
    const auto& k = ssim_kernel();
    ASSERT_EQ(k.size(), 11u);
    double sum = 0.0;
    for (double v : k) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-15);
    EXPECT_NEAR(k[4] / k[5], std::exp(-1.0 / (2 * 1.5 * 1.5)), 1e-15);
}

TEST(Ssim, IdenticalIsOne) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ImageBuffer a = synth::random_image(20, 31, s % 2 ? 1 : 3, s);
        EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
    }
    EXPECT_NEAR(ssim(constant(11, 11, 0.3f), constant(11, 11, 0.3f)), 1.0, 1e-9);
}

TEST(Ssim, SymmetricAndMatchesDirectWindowOracle) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ImageBuffer a = synth::random_image(16, 14, 3, 100 + s);
        const ImageBuffer b = noisy(a, 0.05 + 0.01 * static_cast<double>(s), 200 + s);
        const double ab = ssim(a, b);
        EXPECT_NEAR(ab, ssim(b, a), 1e-12);
        EXPECT_NEAR(ab, oracle::ssim(a, b), 1e-9) << "pair " << s;
    }
}

TEST(Ssim, InvertedImageScoresLower) {
    const ImageBuffer a = synth::random_image(24, 24, 3, 7);
    ImageBuffer inv = a;
    for (float& v : inv.pixels) v = 1.0f - v;
    EXPECT_LT(ssim(a, inv), ssim(a, a));
    EXPECT_LT(ssim(a, inv), 0.0);
}

TEST(Ssim, TooSmallThrows) {
    EXPECT_THROW(ssim(ImageBuffer(10, 40, 3), ImageBuffer(10, 40, 3)), ShapeError);
    EXPECT_THROW(ssim(ImageBuffer(12, 12, 3), ImageBuffer(12, 12, 1)), ShapeError);
}

TEST(Metrics, MonotoneInNoise) {
    const ImageBuffer clean = synth::random_image(24, 24, 3, 8);
    int psnr_ok = 0, ssim_ok = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const ImageBuffer lo = noisy(clean, 0.02, 1000 + t), hi = noisy(clean, 0.08, 2000 + t);
        psnr_ok += psnr(clean, lo).db > psnr(clean, hi).db;
        ssim_ok += ssim(clean, lo) > ssim(clean, hi);
    }
    EXPECT_EQ(psnr_ok, 100);
    EXPECT_EQ(ssim_ok, 100);
}

TEST(Evaluate, IdenticalPair) {
    const ImageBuffer a = synth::random_image(12, 12, 3, 9);
    const MetricReport r = evaluate_pairs({{"a", a, a}});
    ASSERT_EQ(r.entries.size(), 1u);
    EXPECT_EQ(r.infinite_psnr, 1u);
    EXPECT_EQ(r.finite_psnr, 0u);
    EXPECT_NEAR(r.mean_ssim, 1.0, 1e-9);
}

TEST(Evaluate, MeanOverFiniteEntriesInInputOrder) {
    const ImageBuffer t = constant(12, 12, 0.5f);
    const ImageBuffer a = constant(12, 12, 0.6f), b = constant(12, 12, 0.52f);
    const MetricReport r = evaluate_pairs({{"a", a, t}, {"same", t, t}, {"b", b, t}, {"bad", ImageBuffer(4, 4, 3), t}});
    ASSERT_EQ(r.entries.size(), 3u);
    EXPECT_EQ(r.entries[0].name, "a");
    EXPECT_EQ(r.entries[1].name, "same");
    EXPECT_EQ(r.entries[2].name, "b");
    ASSERT_EQ(r.failures.size(), 1u);
    EXPECT_EQ(r.failures[0].index, 3u);
    EXPECT_EQ(r.finite_psnr, 2u);
    EXPECT_EQ(r.infinite_psnr, 1u);
    EXPECT_NEAR(r.mean_psnr, (psnr(a, t).db + psnr(b, t).db) / 2.0, 1e-12);
    EXPECT_NEAR(r.mean_ssim, (r.entries[0].ssim + r.entries[1].ssim + r.entries[2].ssim) / 3.0, 1e-12);
    EXPECT_NE(r.to_tsv().find("per-channel"), std::string::npos);
    EXPECT_NE(r.to_table().find("same"), std::string::npos);
}

TEST(Evaluate, EmptyList) {
    const MetricReport r = evaluate_pairs({});
    EXPECT_TRUE(r.entries.empty());
    EXPECT_EQ(r.finite_psnr, 0u);
    EXPECT_NO_THROW(r.to_tsv());
    EXPECT_NO_THROW(r.to_table());
}

TEST(Evaluate, FilesAndPairList) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "pffnet_test_metrics";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const ImageBuffer a = synth::random_image(16, 16, 3, 10, true);
    save_image(a, (dir / "a.png").string());
    {
        std::ofstream f(dir / "pairs.tsv");
        f << "# restored\ttruth\n" << (dir / "a.png").string() << '\t' << (dir / "a.png").string() << '\n'
          << (dir / "missing.png").string() << '\t' << (dir / "a.png").string() << '\n';
    }
    const auto pairs = read_pair_list((dir / "pairs.tsv").string());
    ASSERT_EQ(pairs.size(), 2u);
    const MetricReport r = evaluate_files(pairs);
    EXPECT_EQ(r.entries.size(), 1u);
    EXPECT_EQ(r.failures.size(), 1u);
    EXPECT_NE(r.failures[0].message.find("missing.png"), std::string::npos);
}
