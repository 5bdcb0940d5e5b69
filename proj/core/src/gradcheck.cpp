#include "pffnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace pffnet {
namespace {

Tensor64 random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Tensor64 t(s);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

class RegionHash {
public:
    void add(const Tensor64& t) {
        for (double v : t.data()) mix(v > 0.0 ? 1u : 0u);
        mix(2u);
    }
    std::uint64_t value() const { return h_; }

private:
    void mix(unsigned bit) {
        h_ ^= bit;
        h_ *= 1099511628211ull;
    }
    std::uint64_t h_ = 14695981039346656037ull;
};

std::uint64_t sign_region(std::initializer_list<const Tensor64*> tensors) {
    RegionHash h;
    for (const auto* t : tensors) h.add(*t);
    return h.value();
}

NamedReport check_conv(std::mt19937_64& rng, const GradCheckOptions& opt, bool transposed) {
    ConvSpec spec;
    if (transposed) {
        spec.kernel = pick(rng, 0, 1) ? 3 : 1;
        spec.stride = pick(rng, 1, 2);
        spec.pad = spec.kernel == 3 ? 1 : 0;
    } else {
        spec.kernel = 2 * pick(rng, 0, 2) + 1;
        spec.stride = pick(rng, 1, 2);
        spec.pad = (spec.kernel - 1) / 2;
    }
    spec.in_channels = pick(rng, 1, 8);
    spec.out_channels = pick(rng, 1, 8);
    const Shape in{pick(rng, 1, 3), spec.in_channels, pick(rng, 1, 8), pick(rng, 1, 8)};
    const Shape out = transposed ? Shape{in.n, spec.out_channels, spec.deconv_out(in.h), spec.deconv_out(in.w)}
                                 : Shape{in.n, spec.out_channels, spec.conv_out(in.h), spec.conv_out(in.w)};
    const Shape wshape = transposed ? spec.deconv_weight_shape() : spec.conv_weight_shape();
    const Tensor64 proj = random_tensor(out, rng);

    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) {
        const Tensor64 y = transposed ? deconv2d(x[0], x[1], x[2].data(), spec) : conv2d(x[0], x[1], x[2].data(), spec);
        return weighted_sum(y, proj);
    };
    fn.gradient = [=](std::span<const Tensor64> x) {
        auto g = transposed ? deconv2d_backward(x[0], x[1], spec, proj) : conv2d_backward(x[0], x[1], spec, proj);
        return std::vector<Tensor64>{std::move(g.input), std::move(g.weight), std::move(g.bias)};
    };
    std::vector<Tensor64> inputs{random_tensor(in, rng), random_tensor(wshape, rng),
                                 random_tensor(bias_shape(spec.out_channels), rng)};
    char name[96];
    std::snprintf(name, sizeof name, "%s k=%zu s=%zu %zux%zu->%zu", transposed ? "deconv2d" : "conv2d", spec.kernel,
                  spec.stride, in.h, in.w, spec.out_channels);
    return {name, grad_check(fn, std::move(inputs), opt)};
}

NamedReport check_relu(std::mt19937_64& rng, const GradCheckOptions& opt) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)};
    const Tensor64 proj = random_tensor(s, rng);
    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) { return weighted_sum(relu(x[0]), proj); };
    fn.gradient = [=](std::span<const Tensor64> x) { return std::vector<Tensor64>{relu_backward(x[0], proj)}; };
    fn.region = [](std::span<const Tensor64> x) { return sign_region({&x[0]}); };
    return {"relu", grad_check(fn, {random_tensor(s, rng)}, opt)};
}

NamedReport check_add(std::mt19937_64& rng, const GradCheckOptions& opt) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)};
    const Tensor64 proj = random_tensor(s, rng);
    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) { return weighted_sum(add_channels(x[0], x[1]), proj); };
    fn.gradient = [=](std::span<const Tensor64>) { return std::vector<Tensor64>{proj, proj}; };
    return {"add_channels", grad_check(fn, {random_tensor(s, rng), random_tensor(s, rng)}, opt)};
}

NamedReport check_reduction(std::mt19937_64& rng, const GradCheckOptions& opt) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)};
    const Tensor64 weights = random_tensor(s, rng);
    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) { return weighted_sum(x[0], weights); };
    fn.gradient = [=](std::span<const Tensor64>) { return std::vector<Tensor64>{weights}; };
    return {"weighted_sum", grad_check(fn, {random_tensor(s, rng)}, opt)};
}

// x + conv2(relu(conv1(x))) with inputs [x, w1, b1, w2, b2].
NamedReport check_residual_block(std::mt19937_64& rng, const GradCheckOptions& opt) {
    const std::size_t c = pick(rng, 1, 8);
    const ConvSpec spec = ConvSpec::same(3, c, c);
    const Shape s{pick(rng, 1, 2), c, pick(rng, 1, 8), pick(rng, 1, 8)};
    const Tensor64 proj = random_tensor(s, rng);
    const double wscale = std::sqrt(2.0 / (9.0 * static_cast<double>(c)));

    auto mid_of = [=](std::span<const Tensor64> x) { return conv2d(x[0], x[1], x[2].data(), spec); };
    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) {
        Tensor64 out = conv2d(relu(mid_of(x)), x[3], x[4].data(), spec);
        add_inplace(out, x[0]);
        return weighted_sum(out, proj);
    };
    fn.gradient = [=](std::span<const Tensor64> x) {
        const Tensor64 pre = mid_of(x);
        const Tensor64 act = relu(pre);
        auto g2 = conv2d_backward(act, x[3], spec, proj);
        auto g1 = conv2d_backward(x[0], x[1], spec, relu_backward(pre, g2.input));
        add_inplace(g1.input, proj);
        return std::vector<Tensor64>{std::move(g1.input), std::move(g1.weight), std::move(g1.bias),
                                     std::move(g2.weight), std::move(g2.bias)};
    };
    fn.region = [=](std::span<const Tensor64> x) {
        const Tensor64 pre = mid_of(x);
        return sign_region({&pre});
    };
    std::vector<Tensor64> inputs{random_tensor(s, rng), random_tensor(spec.conv_weight_shape(), rng, wscale),
                                 random_tensor(bias_shape(c), rng, 0.1),
                                 random_tensor(spec.conv_weight_shape(), rng, wscale),
                                 random_tensor(bias_shape(c), rng, 0.1)};
    return {"residual_block", grad_check(fn, std::move(inputs), opt)};
}

ParamStore<double> store_from(const std::vector<std::string>& keys, std::span<const Tensor64> x) {
    ParamStore<double> store;
    for (std::size_t i = 0; i < keys.size(); ++i) store.insert(keys[i], x[i + 1]);
    return store;
}

}  // namespace

std::string GradCheckReport::summary() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s max_rel_err=%.3e checked=%zu skipped=%zu worst=(input %zu, index %zu)",
                  passed ? "PASS" : "FAIL", max_rel_error, checked, skipped, worst_input, worst_index);
    return buf;
}

GradCheckReport grad_check(const DifferentiableFn& fn, std::vector<Tensor64> inputs, const GradCheckOptions& options) {
    for (const auto& t : inputs) {
        if (!t.all_finite()) throw NumericError("grad_check: non-finite input");
    }
    const std::vector<Tensor64> analytic = fn.gradient(inputs);
    if (analytic.size() != inputs.size()) throw ShapeError("grad_check: gradient count differs from input count");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        require_same_shape(analytic[i].shape(), inputs[i].shape(), "grad_check gradient");
        if (!analytic[i].all_finite()) throw NumericError("grad_check: non-finite analytic gradient");
    }

    std::mt19937_64 rng(options.seed);
    GradCheckReport report;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t size = inputs[i].size();
        std::vector<std::size_t> coords;
        if (options.coords_per_input == 0 || options.coords_per_input >= size) {
            coords.resize(size);
            for (std::size_t j = 0; j < size; ++j) coords[j] = j;
        } else {
            std::uniform_int_distribution<std::size_t> dist(0, size - 1);
            for (std::size_t j = 0; j < options.coords_per_input; ++j) coords.push_back(dist(rng));
        }
        for (std::size_t idx : coords) {
            const double saved = inputs[i][idx];
            inputs[i][idx] = saved + options.step;
            const double plus = fn.value(inputs);
            const std::uint64_t region_plus = fn.region ? fn.region(inputs) : 0;
            inputs[i][idx] = saved - options.step;
            const double minus = fn.value(inputs);
            const std::uint64_t region_minus = fn.region ? fn.region(inputs) : 0;
            inputs[i][idx] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: non-finite loss");
            if (region_plus != region_minus) {
                ++report.skipped;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double a = analytic[i][idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double err = std::abs(a - numeric) / denom;
            ++report.checked;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = idx;
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

std::vector<NamedReport> check_ops(std::uint64_t seed, const GradCheckOptions& options) {
    std::mt19937_64 rng(seed);
    std::vector<NamedReport> out;
    out.push_back(check_conv(rng, options, false));
    out.push_back(check_conv(rng, options, true));
    out.push_back(check_relu(rng, options));
    out.push_back(check_add(rng, options));
    out.push_back(check_reduction(rng, options));
    out.push_back(check_residual_block(rng, options));
    return out;
}

std::uint64_t relu_region(const ForwardTrace<double>& trace) {
    RegionHash h;
    for (const auto& t : trace.skips) h.add(t);
    for (const auto& t : trace.block_mids) h.add(t);
    for (const auto& t : trace.fused) h.add(t);
    return h.value();
}

DifferentiableFn network_fn(const PFFNetConfig& config, const std::vector<std::string>& keys, const Tensor64& projection) {
    DifferentiableFn fn;
    fn.value = [=](std::span<const Tensor64> x) {
        const ParamStore<double> store = store_from(keys, x);
        return weighted_sum(forward(x[0], store, config, static_cast<ForwardTrace<double>*>(nullptr)), projection);
    };
    fn.gradient = [=](std::span<const Tensor64> x) {
        const ParamStore<double> store = store_from(keys, x);
        ForwardTrace<double> trace;
        forward(x[0], store, config, &trace);
        Gradients<double> g = backward(trace, projection, store, config);
        std::vector<Tensor64> out{std::move(g.input)};
        for (const auto& k : keys) out.push_back(g.params.at(k));
        return out;
    };
    fn.region = [=](std::span<const Tensor64> x) {
        const ParamStore<double> store = store_from(keys, x);
        ForwardTrace<double> trace;
        forward(x[0], store, config, &trace);
        return relu_region(trace);
    };
    return fn;
}

GradCheckReport check_network(const PFFNetConfig& config, std::size_t height, std::size_t width, std::uint64_t seed,
                              const GradCheckOptions& options) {
    std::mt19937_64 rng(seed);
    ParamStore<double> params = init_params<double>(config, seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::string> keys = params.keys();
    std::vector<Tensor64> inputs;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor64 image(Shape{1, config.image_channels, height, width});
    for (double& v : image.data()) v = unit(rng);
    inputs.push_back(std::move(image));
    for (const auto& k : keys) {
        Tensor64 t = params.at(k);
        // Nonzero biases so bias gradients flow through every ReLU.
        if (k.ends_with(".bias")) {
            std::normal_distribution<double> dist(0.0, 0.05);
            for (double& v : t.data()) v = dist(rng);
        }
        inputs.push_back(std::move(t));
    }
    const ForwardTrace<double> probe = [&] {
        ForwardTrace<double> tr;
        const ParamStore<double> store = store_from(keys, inputs);
        forward(inputs[0], store, config, &tr);
        return tr;
    }();
    const Tensor64 projection = random_tensor(probe.output.shape(), rng);
    GradCheckOptions opt = options;
    opt.seed = seed;
    return grad_check(network_fn(config, keys, projection), std::move(inputs), opt);
}

}  // namespace pffnet
