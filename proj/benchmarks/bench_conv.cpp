#include <benchmark/benchmark.h>

#include <random>

#include "pffnet/model.hpp"
#include "pffnet/ops.hpp"

using namespace pffnet;

namespace {

Tensor32 random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor32 t(s);
    for (float& v : t.data()) v = u(rng);
    return t;
}

// args: channels, spatial size, stride
void BM_Conv3x3(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const ConvSpec spec = state.range(2) == 2 ? ConvSpec::down(c, 2 * c) : ConvSpec::same(3, c, c);
    const Tensor32 x = random_tensor({1, c, hw, hw}, 1);
    const Tensor32 w = random_tensor(spec.conv_weight_shape(), 2);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, {}, spec));
    const double out = static_cast<double>(spec.conv_out(hw) * spec.conv_out(hw));
    state.counters["GMAC"] = benchmark::Counter(out * static_cast<double>(spec.out_channels * c * 9) * 1e-9,
                                                  benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Args({16, 256, 1})->Args({64, 128, 1})->Args({256, 32, 1})->Args({128, 64, 2})
    ->Unit(benchmark::kMillisecond);

void BM_Stem11x11(benchmark::State& state) {
    const auto hw = static_cast<std::size_t>(state.range(0));
    const ConvSpec spec = ConvSpec::same(11, 3, 16);
    const Tensor32 x = random_tensor({1, 3, hw, hw}, 3);
    const Tensor32 w = random_tensor(spec.conv_weight_shape(), 4);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, {}, spec));
}
BENCHMARK(BM_Stem11x11)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Deconv(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const ConvSpec spec = ConvSpec::up(c, c / 2);
    const Tensor32 x = random_tensor({1, c, hw, hw}, 5);
    const Tensor32 w = random_tensor(spec.deconv_weight_shape(), 6);
    for (auto _ : state) benchmark::DoNotOptimize(deconv2d(x, w, {}, spec));
}
BENCHMARK(BM_Deconv)->Args({256, 32})->Args({32, 128})->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const ConvSpec spec = ConvSpec::same(3, c, c);
    const Tensor32 x = random_tensor({4, c, hw, hw}, 7);
    const Tensor32 w = random_tensor(spec.conv_weight_shape(), 8);
    const Tensor32 g = random_tensor({4, c, hw, hw}, 9);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, w, spec, g));
}
BENCHMARK(BM_ConvBackward)->Args({32, 64})->Args({256, 16})->Unit(benchmark::kMillisecond);

void BM_ForwardInference(benchmark::State& state) {
    const auto hw = static_cast<std::size_t>(state.range(0));
    const PFFNetConfig cfg{};
    const ParamStore<float> params = init_params<float>(cfg, 10);
    const Tensor32 x = random_tensor({1, 3, hw, hw}, 11);
    for (auto _ : state) benchmark::DoNotOptimize(forward_inference(x, params, cfg));
}
BENCHMARK(BM_ForwardInference)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
