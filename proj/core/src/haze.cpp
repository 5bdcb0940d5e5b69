#include "pffnet/haze.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace pffnet {
namespace {

void check_transmission_shape(const Shape& image, const Shape& t, const char* op) {
    if (t.c != 1 || t.n != image.n || t.h != image.h || t.w != image.w) {
        throw ShapeError(std::string(op) + ": transmission " + t.str() + " does not match image " + image.str() +
                         " (expected one channel with equal batch and spatial dims)");
    }
}

}  // namespace

HazeParams::HazeParams(std::array<double, 3> airlight, double beta) : airlight_(airlight), beta_(beta) {
    for (double a : airlight_) {
        if (!(a >= kAirlightMin && a <= kAirlightMax)) {
            throw ConfigError("atmospheric light " + std::to_string(a) + " outside [0.7, 1.0]");
        }
    }
    if (!(beta >= kBetaMin && beta <= kBetaMax)) {
        throw ConfigError("scattering coefficient " + std::to_string(beta) + " outside [0.6, 1.8]");
    }
}

HazeParams sample_haze_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> a(kAirlightMin, kAirlightMax);
    std::uniform_real_distribution<double> b(kBetaMin, kBetaMax);
    std::array<double, 3> airlight{};
    for (double& v : airlight) v = a(rng);
    return HazeParams(airlight, b(rng));
}

template <typename T>
void validate_depth(const Tensor<T>& depth) {
    if (depth.shape().c != 1) throw ShapeError("depth map must have one channel, got " + depth.shape().str());
    for (T v : depth.data()) {
        if (!std::isfinite(v) || v < T(0)) throw ConfigError("depth map values must be finite and >= 0");
    }
}

template <typename T>
Tensor<T> transmission_from_depth(const Tensor<T>& depth, double beta) {
    if (!(beta > 0.0)) throw ConfigError("beta must be positive, got " + std::to_string(beta));
    validate_depth(depth);
    Tensor<T> t(depth.shape());
    auto d = depth.data();
    auto out = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<T>(std::exp(-beta * static_cast<double>(d[i])));
    return t;
}

template <typename T>
Tensor<T> synthesize_haze(const Tensor<T>& clear, const Tensor<T>& transmission, const HazeParams& params) {
    const Shape& s = clear.shape();
    check_transmission_shape(s, transmission.shape(), "synthesize_haze");
    Tensor<T> hazy(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* t = transmission.item(n);
        for (std::size_t c = 0; c < s.c; ++c) {
            const double a = params.airlight(c);
            const T* j = clear.item(n) + c * s.plane();
            T* out = hazy.item(n) + c * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double tv = t[i];
                out[i] = static_cast<T>(static_cast<double>(j[i]) * tv + a * (1.0 - tv));
            }
        }
    }
    return hazy;
}

template <typename T>
Tensor<T> recover_exact(const Tensor<T>& hazy, const Tensor<T>& transmission, const HazeParams& params,
                        double t_floor) {
    if (!(t_floor > 0.0)) throw ConfigError("t_floor must be positive");
    const Shape& s = hazy.shape();
    check_transmission_shape(s, transmission.shape(), "recover_exact");
    Tensor<T> clear(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* t = transmission.item(n);
        for (std::size_t c = 0; c < s.c; ++c) {
            const double a = params.airlight(c);
            const T* in = hazy.item(n) + c * s.plane();
            T* out = clear.item(n) + c * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i) {
                const double tv = std::max(static_cast<double>(t[i]), t_floor);
                const double j = (static_cast<double>(in[i]) - a * (1.0 - tv)) / tv;
                out[i] = static_cast<T>(std::clamp(j, 0.0, 1.0));
            }
        }
    }
    return clear;
}

#define PFFNET_INSTANTIATE_HAZE(T)                                                                       \
    template void validate_depth(const Tensor<T>&);                                                      \
    template Tensor<T> transmission_from_depth(const Tensor<T>&, double);                                \
    template Tensor<T> synthesize_haze(const Tensor<T>&, const Tensor<T>&, const HazeParams&);           \
    template Tensor<T> recover_exact(const Tensor<T>&, const Tensor<T>&, const HazeParams&, double);

PFFNET_INSTANTIATE_HAZE(float)
PFFNET_INSTANTIATE_HAZE(double)

#undef PFFNET_INSTANTIATE_HAZE

}  // namespace pffnet
