#pragma once

// Atmospheric scattering model: I = J * t + A * (1 - t), with t = exp(-beta * d).

#include <array>
#include <cstdint>

#include "pffnet/tensor.hpp"

namespace pffnet {

inline constexpr double kAirlightMin = 0.7;
inline constexpr double kAirlightMax = 1.0;
inline constexpr double kBetaMin = 0.6;
inline constexpr double kBetaMax = 1.8;
inline constexpr double kDefaultTransmissionFloor = 0.05;

// Per-channel atmospheric light and scattering coefficient, range-checked on construction.
class HazeParams {
public:
    HazeParams(std::array<double, 3> airlight, double beta);

    const std::array<double, 3>& airlight() const noexcept { return airlight_; }
    // Channel c of a 1-channel image uses airlight()[0].
    double airlight(std::size_t channel) const noexcept { return airlight_[channel < 3 ? channel : 0]; }
    double beta() const noexcept { return beta_; }

    friend bool operator==(const HazeParams&, const HazeParams&) = default;

private:
    std::array<double, 3> airlight_;
    double beta_;
};

// A ~ U[0.7, 1.0] per channel, beta ~ U[0.6, 1.8]; deterministic per seed.
HazeParams sample_haze_params(std::uint64_t seed);

// Depth maps are (n, 1, h, w) tensors of finite, non-negative values. Throws ConfigError otherwise.
template <typename T>
void validate_depth(const Tensor<T>& depth);

// t = exp(-beta * d). Throws ConfigError if beta <= 0.
template <typename T>
Tensor<T> transmission_from_depth(const Tensor<T>& depth, double beta);

// clear is (n, c, h, w) in [0, 1], transmission is (n, 1, h, w) in (0, 1] and shared across channels.
template <typename T>
Tensor<T> synthesize_haze(const Tensor<T>& clear, const Tensor<T>& transmission, const HazeParams& params);

// J = (I - A (1 - t')) / t' with t' = max(t, t_floor), clamped to [0, 1].
template <typename T>
Tensor<T> recover_exact(const Tensor<T>& hazy, const Tensor<T>& transmission, const HazeParams& params,
                        double t_floor = kDefaultTransmissionFloor);

}  // namespace pffnet
