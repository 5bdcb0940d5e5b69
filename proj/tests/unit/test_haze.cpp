#include <gtest/gtest.h>

#include <cmath>

#include "pffnet/error.hpp"
#include "pffnet/haze.hpp"
#include "synthetic.hpp"

using namespace pffnet;

TEST(HazeParams, RangesEnforced) {
    EXPECT_NO_THROW(HazeParams({0.7, 1.0, 0.85}, 0.6));
    EXPECT_THROW(HazeParams({0.69, 0.8, 0.8}, 1.0), ConfigError);
    EXPECT_THROW(HazeParams({0.8, 0.8, 1.01}, 1.0), ConfigError);
    EXPECT_THROW(HazeParams({0.8, 0.8, 0.8}, 1.81), ConfigError);
    EXPECT_THROW(HazeParams({0.8, 0.8, 0.8}, 0.5), ConfigError);
}

TEST(Transmission, ZeroDepthIsClear) {
    const Tensor64 t = transmission_from_depth(Tensor64(Shape{1, 1, 4, 5}), 1.3);
    for (double v : t.data()) EXPECT_EQ(v, 1.0);
}

TEST(Transmission, UnitDepthScalarOracle) {
    const Tensor64 t = transmission_from_depth(Tensor64(Shape{1, 1, 2, 2}, 1.0), 0.6);
    for (double v : t.data()) EXPECT_DOUBLE_EQ(v, std::exp(-0.6));
}

TEST(Transmission, MonotoneInDepth) {
    const Tensor64 d = synth::random_tensor<double>({1, 1, 16, 16}, 1, 0.0, 2.0);
    Tensor64 deeper = d;
    for (double& v : deeper.data()) v += 0.1;
    const Tensor64 a = transmission_from_depth(d, 1.1), b = transmission_from_depth(deeper, 1.1);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LT(b[i], a[i]);
}

TEST(Transmission, RejectsBadInput) {
    EXPECT_THROW(transmission_from_depth(Tensor64(Shape{1, 1, 2, 2}), 0.0), ConfigError);
    EXPECT_THROW(transmission_from_depth(Tensor64(Shape{1, 1, 2, 2}, -1.0), 1.0), ConfigError);
    EXPECT_THROW(transmission_from_depth(Tensor64(Shape{1, 3, 2, 2}), 1.0), ShapeError);
}

TEST(Synthesize, UnitTransmissionIsIdentity) {
    const Tensor64 j = synth::random_tensor<double>({1, 3, 8, 8}, 2, 0.0, 1.0);
    const Tensor64 i = synthesize_haze(j, Tensor64(Shape{1, 1, 8, 8}, 1.0), HazeParams({0.8, 0.9, 1.0}, 1.0));
    EXPECT_EQ(i, j);
}

TEST(Synthesize, OpaqueLimitApproachesAirlight) {
    const HazeParams p({0.75, 0.85, 0.95}, 1.0);
    const Tensor64 j = synth::random_tensor<double>({1, 3, 4, 4}, 3, 0.0, 1.0);
    const Tensor64 i = synthesize_haze(j, Tensor64(Shape{1, 1, 4, 4}, 1e-12), p);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(i.at(0, c, y, x), p.airlight(c), 1e-11);
}

TEST(Synthesize, PerPixelOracleAndConvexity) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto pair = synth::haze_pair(12, 9, seed);
        const auto& a = pair.params.airlight();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 12; ++y)
                for (std::size_t x = 0; x < 9; ++x) {
                    const double t = pair.transmission.at(0, 0, y, x);
                    const double j = pair.clear.at(0, c, y, x);
                    const double want = j * t + a[c] * (1.0 - t);
                    const double got = pair.hazy.at(0, c, y, x);
                    ASSERT_NEAR(got, want, 1e-7);
                    ASSERT_GE(got, std::min(j, a[c]) - 1e-15);
                    ASSERT_LE(got, std::max(j, a[c]) + 1e-15);
                    ASSERT_LE(got, 1.0);
                }
    }
}

TEST(Synthesize, TransmissionDimsMustMatch) {
    EXPECT_THROW(synthesize_haze(Tensor64(Shape{1, 3, 4, 4}), Tensor64(Shape{1, 1, 4, 5}, 0.5),
                                 HazeParams({0.8, 0.8, 0.8}, 1.0)),
                 ShapeError);
}

TEST(Recover, RoundTripWhereTransmissionAboveFloor) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto pair = synth::haze_pair(16, 16, 100 + seed);
        const Tensor64 j = recover_exact(pair.hazy, pair.transmission, pair.params);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 16; ++y)
                for (std::size_t x = 0; x < 16; ++x) {
                    if (pair.transmission.at(0, 0, y, x) < kDefaultTransmissionFloor) continue;
                    ASSERT_NEAR(j.at(0, c, y, x), pair.clear.at(0, c, y, x), 1e-6);
                }
    }
}

TEST(Recover, UnitTransmissionReturnsInput) {
    const Tensor64 i = synth::random_tensor<double>({1, 3, 5, 5}, 4, 0.0, 1.0);
    EXPECT_EQ(recover_exact(i, Tensor64(Shape{1, 1, 5, 5}, 1.0), HazeParams({0.8, 0.8, 0.8}, 1.0)), i);
}

TEST(Recover, PureAirlightSceneRecoversAirlight) {
    const HazeParams p({0.72, 0.81, 0.93}, 1.2);
    Tensor64 i(Shape{1, 3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 9; ++k) i[c * 9 + k] = p.airlight(c);
    const Tensor64 t = synth::random_tensor<double>({1, 1, 3, 3}, 5, 0.01, 1.0);
    const Tensor64 j = recover_exact(i, t, p);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(j[c * 9 + k], p.airlight(c), 1e-12);
}

TEST(Recover, OutputClampedAndFloorApplied) {
    const HazeParams p({0.9, 0.9, 0.9}, 1.0);
    const Tensor64 i(Shape{1, 3, 2, 2}, 0.0);
    const Tensor64 j = recover_exact(i, Tensor64(Shape{1, 1, 2, 2}, 1e-9), p);
    for (double v : j.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(recover_exact(i, Tensor64(Shape{1, 1, 2, 2}, 0.5), p, 0.0), ConfigError);
}

TEST(Sample, RangesAndDeterminism) {
    double amin = 2, amax = -1, bmin = 9, bmax = -1;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const HazeParams p = sample_haze_params(s);
        for (double a : p.airlight()) {
            amin = std::min(amin, a);
            amax = std::max(amax, a);
        }
        bmin = std::min(bmin, p.beta());
        bmax = std::max(bmax, p.beta());
    }
    EXPECT_GE(amin, kAirlightMin);
    EXPECT_LE(amax, kAirlightMax);
    EXPECT_GE(bmin, kBetaMin);
    EXPECT_LE(bmax, kBetaMax);
    EXPECT_LT(amin, 0.71);
    EXPECT_GT(amax, 0.99);
    EXPECT_EQ(sample_haze_params(42), sample_haze_params(42));
}

TEST(Sample, BetaMean) {
    double sum = 0.0;
    constexpr std::uint64_t n = 100000;
    for (std::uint64_t s = 0; s < n; ++s) sum += sample_haze_params(s).beta();
    EXPECT_NEAR(sum / n, 1.2, 0.02);
}
