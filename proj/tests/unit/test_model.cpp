#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pffnet/error.hpp"
#include "pffnet/gradcheck.hpp"
#include "pffnet/model.hpp"
#include "synthetic.hpp"

using namespace pffnet;

namespace {

template <typename T>
Tensor<T> forward_untraced(const Tensor<T>& x, const ParamStore<T>& p, const PFFNetConfig& c) {
    return forward<T>(x, p, c, nullptr);
}

PFFNetConfig small_config(std::size_t blocks = 2) {
    PFFNetConfig c = PFFNetConfig::tiny();
    c.res_blocks = blocks;
    return c;
}

}  // namespace

TEST(ParamCount, DefaultConfigMatchesLayerTally) {
    EXPECT_EQ(param_count(PFFNetConfig{}), oracle::param_count(16, 4, 18));
    EXPECT_EQ(param_count(PFFNetConfig{}), 22033219u);
}

TEST(ParamCount, EncoderDecoderOnly) {
    PFFNetConfig c;
    c.res_blocks = 0;
    EXPECT_EQ(param_count(c), oracle::param_count(16, 4, 0));
    EXPECT_EQ(param_count(c), 790339u);
}

TEST(ParamCount, DoublingBaseRoughlyQuadruples) {
    PFFNetConfig c;
    PFFNetConfig d = c;
    d.base_channels = 32;
    const double ratio = static_cast<double>(param_count(d)) / static_cast<double>(param_count(c));
    EXPECT_EQ(param_count(d), oracle::param_count(32, 4, 18));
    EXPECT_GT(ratio, 3.9);
    EXPECT_LT(ratio, 4.01);
}

TEST(ParamCount, EqualsStoreElementCount) {
    for (std::size_t blocks : {1u, 6u, 18u}) {
        PFFNetConfig c = small_config(blocks);
        EXPECT_EQ(zero_params<float>(c).element_count(), param_count(c));
    }
}

TEST(InitParams, DefaultConfigHas92Tensors) {
    const ParamStore<float> p = zero_params<float>(PFFNetConfig{});
    EXPECT_EQ(p.size(), 92u);
    EXPECT_TRUE(p.contains("enc.0.weight"));
    EXPECT_TRUE(p.contains("res.07.conv1.bias"));
    EXPECT_TRUE(p.contains("dec.3.weight"));
    EXPECT_TRUE(p.contains("out.weight"));
    EXPECT_EQ(p.at("enc.0.weight").shape(), (Shape{16, 3, 11, 11}));
    EXPECT_EQ(p.at("dec.1.weight").shape(), (Shape{32, 16, 3, 3}));
}

TEST(InitParams, DeterministicPerSeed) {
    const PFFNetConfig c = small_config();
    EXPECT_EQ(init_params<float>(c, 5), init_params<float>(c, 5));
    EXPECT_FALSE(init_params<float>(c, 5) == init_params<float>(c, 6));
}

TEST(InitParams, BiasesZeroWeightsHeScaled) {
    const PFFNetConfig c{};
    const ParamStore<double> p = init_params<double>(c, 1);
    for (const auto& [key, t] : p) {
        if (key.ends_with(".bias")) {
            for (double v : t.data()) ASSERT_EQ(v, 0.0) << key;
        }
    }
    // Residual conv: fan_in = 256 * 9, so std = sqrt(2 / 2304).
    const Tensor64& w = p.at("res.00.conv1.weight");
    double sum = 0.0, sq = 0.0;
    for (double v : w.data()) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double mean = sum / n;
    const double std = std::sqrt(sq / n - mean * mean);
    const double want = std::sqrt(2.0 / 2304.0);
    EXPECT_NEAR(mean, 0.0, 4.0 * want / std::sqrt(n));
    EXPECT_NEAR(std / want, 1.0, 0.01);
}

TEST(InitParams, FloatAndDoubleAgreeUpToRounding) {
    const PFFNetConfig c = small_config();
    const auto f = init_params<float>(c, 3);
    const auto d = init_params<double>(c, 3);
    for (const auto& [key, t] : d) {
        const Tensor32& g = f.at(key);
        for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(g[i], static_cast<float>(t[i])) << key;
    }
}

TEST(CheckParams, NamesOffendingKey) {
    const PFFNetConfig c = small_config();
    ParamStore<float> p = zero_params<float>(c);
    p.insert("extra.weight", Tensor32(Shape{1, 1, 1, 1}));
    try {
        check_params(p, c);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("extra.weight"), std::string::npos);
    }
    ParamStore<float> q = zero_params<float>(c);
    q.insert("res.01.conv2.weight", Tensor32(Shape{32, 32, 1, 1}));
    try {
        check_params(q, c);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("res.01.conv2.weight"), std::string::npos);
    }
}

TEST(Config, RejectsZeroBlocks) {
    PFFNetConfig c;
    c.res_blocks = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(c.bottleneck_channels(), 256u);
}

TEST(Encoder, PyramidShapes) {
    const PFFNetConfig c{};
    const auto p = zero_params<float>(c);
    const auto d = encoder_forward(Tensor32(Shape{1, 3, 16, 16}), p, c);
    ASSERT_EQ(d.size(), 5u);
    EXPECT_EQ(d[0].shape(), (Shape{1, 16, 16, 16}));
    EXPECT_EQ(d[1].shape(), (Shape{1, 32, 8, 8}));
    EXPECT_EQ(d[2].shape(), (Shape{1, 64, 4, 4}));
    EXPECT_EQ(d[3].shape(), (Shape{1, 128, 2, 2}));
    EXPECT_EQ(d[4].shape(), (Shape{1, 256, 1, 1}));
}

TEST(Encoder, BottleneckAtSixtyFour) {
    PFFNetConfig c{};
    c.res_blocks = 1;
    const auto p = init_params<float>(c, 1);
    const auto d = encoder_forward(synth::random_tensor<float>({1, 3, 64, 64}, 2, 0.0, 1.0), p, c);
    EXPECT_EQ(d.back().shape(), (Shape{1, 256, 4, 4}));
    for (const auto& t : d)
        for (float v : t.data()) ASSERT_GE(v, 0.0f);
}

TEST(Encoder, IndivisibleInputAsksForPadding) {
    const PFFNetConfig c = small_config();
    const auto p = zero_params<float>(c);
    try {
        encoder_forward(Tensor32(Shape{1, 3, 10, 12}), p, c);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
    }
}

TEST(Transform, ZeroWeightsDoubleTheInput) {
    const PFFNetConfig c = small_config(3);
    const auto p = zero_params<double>(c);
    const Tensor64 d4 = synth::random_tensor<double>({1, 32, 4, 4}, 3);
    const Tensor64 u4 = transform_forward(d4, p, c);
    ASSERT_EQ(u4.shape(), d4.shape());
    for (std::size_t i = 0; i < d4.size(); ++i) ASSERT_EQ(u4[i], 2.0 * d4[i]);
}

TEST(Transform, OneBlockMatchesManualComposition) {
    const PFFNetConfig c = small_config(1);
    const auto p = init_params<double>(c, 4);
    const Tensor64 d4 = synth::random_tensor<double>({2, 32, 4, 4}, 5);
    const ConvSpec spec = ConvSpec::same(3, 32, 32);
    const Tensor64 mid = relu(conv2d(d4, p.weight("res.00.conv1"), p.bias("res.00.conv1"), spec));
    const Tensor64 block = add_channels(d4, conv2d(mid, p.weight("res.00.conv2"), p.bias("res.00.conv2"), spec));
    const Tensor64 want = add_channels(d4, block);
    const Tensor64 got = transform_forward(d4, p, c);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6 * std::max(1.0, std::abs(want[i])));
}

TEST(Transform, ChannelMismatchThrows) {
    const PFFNetConfig c = small_config();
    const auto p = zero_params<float>(c);
    EXPECT_THROW(transform_forward(Tensor32(Shape{1, 16, 4, 4}), p, c), ShapeError);
}

TEST(Decoder, ZeroFinalConvGivesBiasBroadcast) {
    const PFFNetConfig c = small_config();
    auto p = init_params<double>(c, 6);
    p.mutable_at("out.weight").fill(0.0);
    const std::vector<double> b{0.25, -0.5, 0.75};
    std::copy(b.begin(), b.end(), p.mutable_at("out.bias").data().begin());
    const Tensor64 out = forward_untraced(synth::random_tensor<double>({1, 3, 16, 16}, 7, 0.0, 1.0), p, c);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) ASSERT_EQ(out.at(0, ch, y, x), b[ch]);
}

TEST(Decoder, SkipFlagChangesOutput) {
    PFFNetConfig with = small_config();
    PFFNetConfig without = with;
    without.skip_connections = false;
    const auto p = init_params<double>(with, 8);
    const Tensor64 u = synth::random_tensor<double>({1, 32, 2, 2}, 9);
    std::vector<Tensor64> skips{synth::random_tensor<double>({1, 8, 8, 8}, 10),
                                synth::random_tensor<double>({1, 16, 4, 4}, 11)};
    const Tensor64 a = decoder_forward(u, skips, p, with);
    const Tensor64 b = decoder_forward(u, skips, p, without);
    EXPECT_EQ(a.shape(), (Shape{1, 3, 8, 8}));
    EXPECT_FALSE(a == b);
}

TEST(Decoder, FusionMismatchNamesLevel) {
    const PFFNetConfig c = small_config();
    const auto p = zero_params<double>(c);
    std::vector<Tensor64> skips{Tensor64(Shape{1, 8, 8, 6}), Tensor64(Shape{1, 16, 4, 4})};
    try {
        decoder_forward(Tensor64(Shape{1, 32, 2, 2}), skips, p, c);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("level 0"), std::string::npos) << e.what();
    }
}

TEST(Forward, ShapeDeterminismFiniteness) {
    PFFNetConfig c{};
    c.res_blocks = 1;
    const auto p = init_params<float>(c, 12);
    const Tensor32 in = synth::random_tensor<float>({1, 3, 64, 64}, 13, 0.0, 1.0);
    const Tensor32 a = forward_untraced(in, p, c);
    const Tensor32 b = forward_untraced(in, p, c);
    EXPECT_EQ(a.shape(), in.shape());
    EXPECT_EQ(a, b);
    EXPECT_TRUE(a.all_finite());
    EXPECT_EQ(forward_inference(in, p, c), a);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
    const PFFNetConfig c = small_config();
    const Tensor64 out = forward_untraced(synth::random_tensor<double>({2, 3, 8, 8}, 14, 0.0, 1.0), zero_params<double>(c), c);
    for (double v : out.data()) ASSERT_EQ(v, 0.0);
}

TEST(Forward, OutputDimsMatchForFuzzedSizes) {
    const PFFNetConfig c = small_config(1);
    const auto p = init_params<float>(c, 15);
    std::mt19937_64 rng(16);
    for (int i = 0; i < 10; ++i) {
        const std::size_t h = 4 * (1 + rng() % 8), w = 4 * (1 + rng() % 8);
        const Tensor32 out = forward_untraced(Tensor32(Shape{1, 3, h, w}, 0.5f), p, c);
        EXPECT_EQ(out.shape(), (Shape{1, 3, h, w}));
    }
}

TEST(Backward, ZeroGradGivesZeroGradients) {
    const PFFNetConfig c = small_config();
    const auto p = init_params<double>(c, 17);
    ForwardTrace<double> trace;
    const Tensor64 out = forward(synth::random_tensor<double>({1, 3, 16, 16}, 18, 0.0, 1.0), p, c, &trace);
    const Gradients<double> g = backward(trace, Tensor64(out.shape()), p, c);
    EXPECT_EQ(g.params.keys(), p.keys());
    for (const auto& [key, t] : g.params)
        for (double v : t.data()) ASSERT_EQ(v, 0.0) << key;
}

TEST(Backward, StaleTraceIsRejected) {
    const PFFNetConfig c = small_config();
    auto p = init_params<double>(c, 19);
    ForwardTrace<double> trace;
    const Tensor64 out = forward(Tensor64(Shape{1, 3, 8, 8}, 0.5), p, c, &trace);
    p.mutable_at("out.bias")[0] = 1.0;
    EXPECT_THROW(backward(trace, out, p, c), ConfigError);
    PFFNetConfig other = c;
    other.skip_connections = false;
    const auto q = init_params<double>(other, 19);
    ForwardTrace<double> t2;
    const Tensor64 o2 = forward(Tensor64(Shape{1, 3, 8, 8}, 0.5), q, other, &t2);
    EXPECT_THROW(backward(t2, o2, q, c), ConfigError);
}

TEST(Backward, TinyNetworkSpotCheck) {
    GradCheckOptions opt;
    opt.tolerance = 1e-3;
    opt.coords_per_input = 20;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const GradCheckReport r = check_network(small_config(2), 16, 16, seed, opt);
        EXPECT_TRUE(r.passed) << r.summary();
        EXPECT_GE(r.checked, 20u);
    }
}

TEST(Backward, SkipGradientsOnTwoLevelNetwork) {
    // Input gradient flows through both the encoder path and the skip fusions; check every
    // input coordinate against finite differences, with and without skips.
    for (bool skip : {true, false}) {
        PFFNetConfig c = small_config(1);
        c.base_channels = 2;
        c.stem_kernel = 3;
        c.skip_connections = skip;
        GradCheckOptions opt;
        const GradCheckReport r = check_network(c, 8, 8, 21, opt);
        EXPECT_TRUE(r.passed) << "skip=" << skip << " " << r.summary();
        EXPECT_LT(r.max_rel_error, 1e-4);
    }
}

TEST(ShapePlan, FullModelSizes) {
    const PFFNetConfig c{};
    EXPECT_EQ(shape_plan(64, 64, c).bottleneck, (Shape{1, 256, 4, 4}));
    const ShapePlan p4k = shape_plan(3840, 2160, c);
    EXPECT_EQ(p4k.bottleneck, (Shape{1, 256, 240, 135}));
    EXPECT_TRUE(p4k.divisible);
    EXPECT_EQ(p4k.layers.back().dims, (Shape{1, 3, 3840, 2160}));
    EXPECT_EQ(p4k.layers.size(), layer_list(c).size());
    EXPECT_FALSE(shape_plan(50, 50, c).divisible);
}

TEST(Ablation, AllBlockCountsRunForwardBackward) {
    for (std::size_t blocks : {6u, 12u, 18u, 24u}) {
        PFFNetConfig c{};
        c.res_blocks = blocks;
        const auto p = init_params<float>(c, blocks);
        ForwardTrace<float> trace;
        const Tensor32 out = forward(synth::random_tensor<float>({1, 3, 16, 16}, 22, 0.0, 1.0), p, c, &trace);
        const Gradients<float> g = backward(trace, out, p, c);
        EXPECT_EQ(g.params.size(), 2 * (5 + 2 * blocks + 4 + 1));
        for (const auto& [key, t] : g.params) ASSERT_TRUE(t.all_finite()) << key;
    }
}
