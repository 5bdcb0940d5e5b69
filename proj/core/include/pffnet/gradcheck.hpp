#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pffnet/model.hpp"
#include "pffnet/tensor.hpp"

namespace pffnet {

// A scalar function of several 64-bit tensors together with its analytic gradient.
struct DifferentiableFn {
    std::function<double(std::span<const Tensor64>)> value;
    std::function<std::vector<Tensor64>(std::span<const Tensor64>)> gradient;
    // Optional. Fingerprint of the piecewise-linear region (ReLU sign pattern) at a point.
    // A coordinate whose +/- step lands in different regions straddles a kink, where the
    // central difference does not estimate the derivative; such coordinates are skipped.
    std::function<std::uint64_t(std::span<const Tensor64>)> region;
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    // Within one ReLU region the loss is linear in any single coordinate, so the central
    // difference has no truncation error and a larger step only reduces roundoff.
    double step = 1e-4;
    // Gradients smaller than this are compared in absolute terms.
    double abs_floor = 1e-6;
    // 0 checks every coordinate, otherwise this many sampled coordinates per input.
    std::size_t coords_per_input = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    bool passed = true;

    std::string summary() const;
};

// Compares fn.gradient against central differences of fn.value. Relative error per
// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
// Throws NumericError on non-finite values.
GradCheckReport grad_check(const DifferentiableFn& fn, std::vector<Tensor64> inputs, const GradCheckOptions& options);

// Ready-made checks: each projects an op's output onto a random tensor so the scalar
// loss is sum(op(...) * R). Dimensions are drawn from the seed.
struct NamedReport {
    std::string name;
    GradCheckReport report;
};

std::vector<NamedReport> check_ops(std::uint64_t seed, const GradCheckOptions& options);

// Whole-network check on `config` with a random input of the given spatial size. Samples
// options.coords_per_input coordinates from every parameter tensor and from the input.
GradCheckReport check_network(const PFFNetConfig& config, std::size_t height, std::size_t width, std::uint64_t seed,
                              const GradCheckOptions& options);

// The loss used by check_network, exposed so tests can perturb a single parameter.
DifferentiableFn network_fn(const PFFNetConfig& config, const std::vector<std::string>& keys, const Tensor64& projection);

// Sign pattern of every ReLU input in a forward pass, hashed.
std::uint64_t relu_region(const ForwardTrace<double>& trace);

}  // namespace pffnet
