#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace synth {

template <typename T>
pffnet::Tensor<T> random_tensor(const pffnet::Shape& shape, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    pffnet::Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

template pffnet::Tensor<float> random_tensor<float>(const pffnet::Shape&, std::uint64_t, double, double);
template pffnet::Tensor<double> random_tensor<double>(const pffnet::Shape&, std::uint64_t, double, double);

pffnet::ImageBuffer random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed, bool quantized) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    pffnet::ImageBuffer img(h, w, c);
    for (auto& v : img.pixels) {
        const double x = u(rng);
        v = quantized ? static_cast<float>(std::floor(x * 256.0 > 255.0 ? 255.0 : x * 256.0) / 255.0)
                      : static_cast<float>(x);
    }
    return img;
}

HazePair haze_pair(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    constexpr double tau = 2.0 * std::numbers::pi;

    pffnet::Tensor64 clear(pffnet::Shape{1, 3, h, w});
    pffnet::Tensor64 depth(pffnet::Shape{1, 1, h, w});
    double fx[3], fy[3], phase[3], level[3];
    for (int c = 0; c < 3; ++c) {
        fx[c] = 0.5 + 1.5 * u(rng);
        fy[c] = 0.5 + 1.5 * u(rng);
        phase[c] = u(rng);
        level[c] = 0.35 + 0.3 * u(rng);
    }
    const double gx = u(rng), gy = u(rng), bx = u(rng), by = u(rng);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double X = static_cast<double>(x) / static_cast<double>(w);
            const double Y = static_cast<double>(y) / static_cast<double>(h);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = level[c] + 0.25 * std::sin(tau * (fx[c] * X + phase[c])) * std::cos(tau * fy[c] * Y);
                clear.at(0, c, y, x) = std::clamp(v, 0.1, 0.9);
            }
            const double bump = std::exp(-((X - bx) * (X - bx) + (Y - by) * (Y - by)) / 0.05);
            depth.at(0, 0, y, x) = std::clamp(0.2 + 0.4 * (gx * X + gy * Y) + 0.2 * bump, 0.0, 1.0);
        }

    const pffnet::HazeParams params = pffnet::sample_haze_params(seed ^ 0x5DEECE66Dull);
    pffnet::Tensor64 t = pffnet::transmission_from_depth(depth, params.beta());
    pffnet::Tensor64 hazy = pffnet::synthesize_haze(clear, t, params);
    return {std::move(clear), std::move(depth), std::move(t), std::move(hazy), params};
}

pffnet::InMemoryPairs haze_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
    pffnet::InMemoryPairs data;
    for (std::size_t i = 0; i < count; ++i) {
        HazePair p = haze_pair(size, size, seed * 1000 + i);
        data.add({pffnet::tensor_to_image(p.hazy.cast<float>()), pffnet::tensor_to_image(p.clear.cast<float>()),
                  "synthetic-" + std::to_string(i), {}});
    }
    return data;
}

}  // namespace synth
