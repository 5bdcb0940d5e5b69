#include "pffnet/model.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace pffnet {
namespace {

std::string enc_name(std::size_t i) { return "enc." + std::to_string(i); }
std::string dec_name(std::size_t j) { return "dec." + std::to_string(j); }

ConvSpec stem_spec(const PFFNetConfig& c) {
    return ConvSpec::same(c.stem_kernel, c.image_channels, c.base_channels);
}
ConvSpec enc_spec(const PFFNetConfig& c, std::size_t i) {
    return ConvSpec::down(c.channels_at(i - 1), c.channels_at(i));
}
ConvSpec res_spec(const PFFNetConfig& c) {
    return ConvSpec::same(3, c.bottleneck_channels(), c.bottleneck_channels());
}
ConvSpec dec_spec(const PFFNetConfig& c, std::size_t j) {
    return ConvSpec::up(c.channels_at(j), c.channels_at(j - 1));
}
ConvSpec out_spec(const PFFNetConfig& c) { return ConvSpec::same(3, c.base_channels, c.image_channels); }

template <typename T>
Tensor<T> conv_layer(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name, const ConvSpec& spec) {
    return conv2d(x, p.weight(name), p.bias(name), spec);
}

template <typename T>
Tensor<T> deconv_layer(const Tensor<T>& x, const ParamStore<T>& p, const std::string& name, const ConvSpec& spec) {
    return deconv2d(x, p.weight(name), p.bias(name), spec);
}

void check_image(const Shape& s, const PFFNetConfig& config) {
    if (s.c != config.image_channels) {
        throw ShapeError("network input has " + std::to_string(s.c) + " channels, expected " +
                         std::to_string(config.image_channels));
    }
    const std::size_t m = config.divisor();
    if (s.h == 0 || s.w == 0 || s.h % m != 0 || s.w % m != 0) {
        throw ShapeError("network input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is not a multiple of " + std::to_string(m) + "; pad it first (see pad_to_multiple)");
    }
}

template <typename T>
void store_grads(ParamStore<T>& grads, const std::string& layer, ConvGrads<T>& g) {
    grads.insert(layer + ".weight", std::move(g.weight));
    grads.insert(layer + ".bias", std::move(g.bias));
}

template <typename T>
Tensor<T> encoder_step(const Tensor<T>& x, const ParamStore<T>& p, const PFFNetConfig& c, std::size_t i) {
    Tensor<T> d = conv_layer(x, p, enc_name(i), i == 0 ? stem_spec(c) : enc_spec(c, i));
    relu_inplace(d);
    return d;
}

template <typename T>
Tensor<T> transform_impl(const Tensor<T>& bottleneck, const ParamStore<T>& p, const PFFNetConfig& c,
                         ForwardTrace<T>* trace) {
    if (bottleneck.shape().c != c.bottleneck_channels()) {
        throw ShapeError("transform input has " + std::to_string(bottleneck.shape().c) + " channels, expected " +
                         std::to_string(c.bottleneck_channels()));
    }
    const ConvSpec spec = res_spec(c);
    Tensor<T> x = bottleneck;
    for (std::size_t b = 0; b < c.res_blocks; ++b) {
        const std::string name = res_block_name(b);
        Tensor<T> mid = conv_layer(x, p, name + ".conv1", spec);
        relu_inplace(mid);
        Tensor<T> r = conv_layer(mid, p, name + ".conv2", spec);
        if (trace) {
            trace->block_inputs.push_back(x);
            trace->block_mids.push_back(std::move(mid));
        }
        add_inplace(x, r);
    }
    add_inplace(x, bottleneck);
    return x;
}

template <typename T>
Tensor<T> decoder_impl(Tensor<T> u, const std::vector<Tensor<T>>& skips, const ParamStore<T>& p,
                       const PFFNetConfig& c, ForwardTrace<T>* trace) {
    const std::size_t levels = c.encoder_levels;
    if (c.skip_connections && skips.size() < levels) {
        throw ShapeError("decoder needs " + std::to_string(levels) + " skip maps, got " +
                         std::to_string(skips.size()));
    }
    if (trace) trace->fused.assign(levels + 1, Tensor<T>{});
    for (std::size_t j = levels; j >= 1; --j) {
        Tensor<T> f = deconv_layer(relu(u), p, dec_name(j), dec_spec(c, j));
        if (c.skip_connections) {
            const Shape& ds = skips[j - 1].shape();
            if (!(ds == f.shape())) {
                throw ShapeError("skip fusion at level " + std::to_string(j - 1) + ": encoder map " + ds.str() +
                                 " vs decoder map " + f.shape().str());
            }
            add_inplace(f, skips[j - 1]);
        }
        if (trace) trace->fused[j] = std::move(u);
        u = std::move(f);
    }
    Tensor<T> out = conv_layer(relu(u), p, "out", out_spec(c));
    if (trace) trace->fused[0] = std::move(u);
    return out;
}

}  // namespace

void PFFNetConfig::validate() const {
    if (stem_kernel == 0 || stem_kernel % 2 == 0) throw ConfigError("stem_kernel must be odd and positive");
    if (base_channels == 0) throw ConfigError("base_channels must be positive");
    if (encoder_levels == 0 || encoder_levels > 8) throw ConfigError("encoder_levels must be in [1, 8]");
    if (res_blocks == 0) throw ConfigError("res_blocks must be at least 1");
    if (image_channels == 0) throw ConfigError("image_channels must be positive");
}

std::string res_block_name(std::size_t block) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "res.%02zu", block);
    return buf;
}

std::vector<LayerSpec> layer_list(const PFFNetConfig& c) {
    std::vector<LayerSpec> layers;
    layers.push_back({enc_name(0), LayerKind::Conv, stem_spec(c)});
    for (std::size_t i = 1; i <= c.encoder_levels; ++i) layers.push_back({enc_name(i), LayerKind::Conv, enc_spec(c, i)});
    for (std::size_t b = 0; b < c.res_blocks; ++b) {
        layers.push_back({res_block_name(b) + ".conv1", LayerKind::Conv, res_spec(c)});
        layers.push_back({res_block_name(b) + ".conv2", LayerKind::Conv, res_spec(c)});
    }
    for (std::size_t j = c.encoder_levels; j >= 1; --j) layers.push_back({dec_name(j), LayerKind::Deconv, dec_spec(c, j)});
    layers.push_back({"out", LayerKind::Conv, out_spec(c)});
    return layers;
}

std::size_t param_count(const PFFNetConfig& config) {
    std::size_t total = 0;
    for (const auto& l : layer_list(config)) total += l.weight_count() + l.conv.out_channels;
    return total;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& key) const {
    auto it = tensors_.find(key);
    if (it == tensors_.end()) throw ConfigError("parameter store has no key '" + key + "'");
    return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::mutable_at(const std::string& key) {
    auto it = tensors_.find(key);
    if (it == tensors_.end()) throw ConfigError("parameter store has no key '" + key + "'");
    ++generation_;
    return it->second;
}

template <typename T>
std::size_t ParamStore<T>::element_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : tensors_) n += v.size();
    return n;
}

template <typename T>
std::vector<std::string> ParamStore<T>::keys() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [k, v] : tensors_) out.push_back(k);
    return out;
}

template <typename T>
ParamStore<T> zero_params(const PFFNetConfig& config) {
    ParamStore<T> store;
    for (const auto& l : layer_list(config)) {
        store.insert(l.name + ".weight", Tensor<T>(l.weight_shape()));
        store.insert(l.name + ".bias", Tensor<T>(bias_shape(l.conv.out_channels)));
    }
    return store;
}

template <typename T>
ParamStore<T> init_params(const PFFNetConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ParamStore<T> store;
    for (const auto& l : layer_list(config)) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.fan_in())));
        Tensor<T> w(l.weight_shape());
        for (T& v : w.data()) v = static_cast<T>(dist(rng));
        store.insert(l.name + ".weight", std::move(w));
        store.insert(l.name + ".bias", Tensor<T>(bias_shape(l.conv.out_channels)));
    }
    return store;
}

template <typename T>
void check_params(const ParamStore<T>& params, const PFFNetConfig& config) {
    std::size_t expected = 0;
    for (const auto& l : layer_list(config)) {
        for (const auto& [key, shape] : {std::pair{l.name + ".weight", l.weight_shape()},
                                         std::pair{l.name + ".bias", bias_shape(l.conv.out_channels)}}) {
            if (!params.contains(key)) throw ConfigError("missing parameter '" + key + "'");
            if (!(params.at(key).shape() == shape)) {
                throw ConfigError("parameter '" + key + "' has shape " + params.at(key).shape().str() +
                                  ", config requires " + shape.str());
            }
            ++expected;
        }
    }
    if (params.size() != expected) {
        const auto layers = layer_list(config);
        for (const auto& key : params.keys()) {
            bool known = false;
            for (const auto& l : layers) known = known || key == l.name + ".weight" || key == l.name + ".bias";
            if (!known) throw ConfigError("unexpected parameter '" + key + "' for this config");
        }
    }
}

template <typename T>
std::vector<Tensor<T>> encoder_forward(const Tensor<T>& image, const ParamStore<T>& params,
                                       const PFFNetConfig& config) {
    check_image(image.shape(), config);
    std::vector<Tensor<T>> d;
    d.reserve(config.encoder_levels + 1);
    d.push_back(encoder_step(image, params, config, 0));
    for (std::size_t i = 1; i <= config.encoder_levels; ++i) d.push_back(encoder_step(d.back(), params, config, i));
    return d;
}

template <typename T>
Tensor<T> transform_forward(const Tensor<T>& bottleneck, const ParamStore<T>& params, const PFFNetConfig& config) {
    return transform_impl(bottleneck, params, config, static_cast<ForwardTrace<T>*>(nullptr));
}

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& bottleneck_out, const std::vector<Tensor<T>>& skips,
                          const ParamStore<T>& params, const PFFNetConfig& config) {
    return decoder_impl(bottleneck_out, skips, params, config, static_cast<ForwardTrace<T>*>(nullptr));
}

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const ParamStore<T>& params, const PFFNetConfig& config,
                  ForwardTrace<T>* trace) {
    config.validate();
    std::vector<Tensor<T>> d = encoder_forward(image, params, config);
    if (trace) {
        *trace = ForwardTrace<T>{};
        trace->config = config;
        trace->generation = params.generation();
        trace->store = &params;
        trace->input = image;
    }
    Tensor<T> u = transform_impl(d.back(), params, config, trace);
    Tensor<T> out = decoder_impl(std::move(u), d, params, config, trace);
    if (trace) {
        trace->skips = std::move(d);
        trace->output = out;
    }
    return out;
}

template <typename T>
Gradients<T> backward(const ForwardTrace<T>& trace, const Tensor<T>& grad_output, const ParamStore<T>& params,
                      const PFFNetConfig& config) {
    if (!(trace.config == config)) throw ConfigError("backward: trace was recorded with a different config");
    if (trace.store != &params || trace.generation != params.generation()) {
        throw ConfigError("backward: trace is stale (parameters changed since forward)");
    }
    if (trace.skips.size() != config.encoder_levels + 1 || trace.fused.size() != config.encoder_levels + 1 ||
        trace.block_inputs.size() != config.res_blocks) {
        throw ConfigError("backward: trace is incomplete");
    }
    require_same_shape(grad_output.shape(), trace.output.shape(), "backward grad_output");

    const std::size_t levels = config.encoder_levels;
    Gradients<T> grads;
    std::vector<Tensor<T>> grad_skip(levels + 1);
    for (std::size_t i = 0; i <= levels; ++i) grad_skip[i] = Tensor<T>(trace.skips[i].shape());

    // J = conv(relu(U_0))
    auto g = conv2d_backward(relu(trace.fused[0]), params.weight("out"), out_spec(config), grad_output);
    Tensor<T> grad_u = relu_backward(trace.fused[0], g.input);
    store_grads(grads.params, "out", g);

    // U_{j-1} = D_{j-1} + deconv(relu(U_j))
    for (std::size_t j = 1; j <= levels; ++j) {
        if (config.skip_connections) add_inplace(grad_skip[j - 1], grad_u);
        auto dg = deconv2d_backward(relu(trace.fused[j]), params.weight(dec_name(j)), dec_spec(config, j), grad_u);
        grad_u = relu_backward(trace.fused[j], dg.input);
        store_grads(grads.params, dec_name(j), dg);
    }

    // U_L = D_L + x_B, x_{b+1} = x_b + conv2(relu(conv1(x_b))), x_0 = D_L
    add_inplace(grad_skip[levels], grad_u);
    const ConvSpec rspec = res_spec(config);
    Tensor<T> grad_x = std::move(grad_u);
    for (std::size_t b = config.res_blocks; b-- > 0;) {
        const std::string name = res_block_name(b);
        auto g2 = conv2d_backward(trace.block_mids[b], params.weight(name + ".conv2"), rspec, grad_x);
        Tensor<T> grad_mid = relu_backward(trace.block_mids[b], g2.input);
        auto g1 = conv2d_backward(trace.block_inputs[b], params.weight(name + ".conv1"), rspec, grad_mid);
        add_inplace(grad_x, g1.input);
        store_grads(grads.params, name + ".conv2", g2);
        store_grads(grads.params, name + ".conv1", g1);
    }
    add_inplace(grad_skip[levels], grad_x);

    // D_i = relu(conv(D_{i-1})), D_{-1} = I
    for (std::size_t i = levels + 1; i-- > 0;) {
        Tensor<T> grad_pre = relu_backward(trace.skips[i], grad_skip[i]);
        const Tensor<T>& in = i == 0 ? trace.input : trace.skips[i - 1];
        auto eg = conv2d_backward(in, params.weight(enc_name(i)), i == 0 ? stem_spec(config) : enc_spec(config, i),
                                  grad_pre);
        if (i == 0) {
            grads.input = std::move(eg.input);
        } else {
            add_inplace(grad_skip[i - 1], eg.input);
        }
        store_grads(grads.params, enc_name(i), eg);
    }
    return grads;
}

template <typename T>
Tensor<T> forward_inference(const Tensor<T>& image, const ParamStore<T>& params, const PFFNetConfig& config) {
    config.validate();
    check_image(image.shape(), config);
    const std::size_t levels = config.encoder_levels;

    std::vector<Tensor<T>> d(levels + 1);
    d[0] = encoder_step(image, params, config, 0);
    for (std::size_t i = 1; i <= levels; ++i) d[i] = encoder_step(d[i - 1], params, config, i);

    const ConvSpec rspec = res_spec(config);
    Tensor<T> x = d[levels];
    for (std::size_t b = 0; b < config.res_blocks; ++b) {
        const std::string name = res_block_name(b);
        Tensor<T> mid = conv_layer(x, params, name + ".conv1", rspec);
        relu_inplace(mid);
        Tensor<T> r = conv_layer(mid, params, name + ".conv2", rspec);
        mid.release();
        add_inplace(x, r);
    }
    add_inplace(x, d[levels]);
    d[levels].release();

    for (std::size_t j = levels; j >= 1; --j) {
        relu_inplace(x);
        Tensor<T> f = deconv_layer(x, params, dec_name(j), dec_spec(config, j));
        x.release();
        if (config.skip_connections) add_inplace(f, d[j - 1]);
        d[j - 1].release();
        x = std::move(f);
    }
    relu_inplace(x);
    return conv_layer(x, params, "out", out_spec(config));
}

ShapePlan shape_plan(std::size_t height, std::size_t width, const PFFNetConfig& config) {
    ShapePlan plan;
    const std::size_t m = config.divisor();
    plan.divisible = height % m == 0 && width % m == 0;
    std::size_t h = height, w = width;
    std::vector<std::size_t> hs{h}, ws{w};
    plan.layers.push_back({enc_name(0), {1, config.base_channels, h, w}});
    for (std::size_t i = 1; i <= config.encoder_levels; ++i) {
        const ConvSpec s = enc_spec(config, i);
        h = s.conv_out(h);
        w = s.conv_out(w);
        hs.push_back(h);
        ws.push_back(w);
        plan.layers.push_back({enc_name(i), {1, config.channels_at(i), h, w}});
    }
    plan.bottleneck = {1, config.bottleneck_channels(), h, w};
    for (std::size_t b = 0; b < config.res_blocks; ++b) {
        plan.layers.push_back({res_block_name(b) + ".conv1", plan.bottleneck});
        plan.layers.push_back({res_block_name(b) + ".conv2", plan.bottleneck});
    }
    for (std::size_t j = config.encoder_levels; j >= 1; --j) {
        h = dec_spec(config, j).deconv_out(h);
        w = dec_spec(config, j).deconv_out(w);
        plan.layers.push_back({dec_name(j), {1, config.channels_at(j - 1), h, w}});
    }
    plan.layers.push_back({"out", {1, config.image_channels, h, w}});
    return plan;
}

#define PFFNET_INSTANTIATE_MODEL(T)                                                                              \
    template class ParamStore<T>;                                                                                \
    template ParamStore<T> zero_params<T>(const PFFNetConfig&);                                                  \
    template ParamStore<T> init_params<T>(const PFFNetConfig&, std::uint64_t);                                   \
    template void check_params(const ParamStore<T>&, const PFFNetConfig&);                                       \
    template std::vector<Tensor<T>> encoder_forward(const Tensor<T>&, const ParamStore<T>&, const PFFNetConfig&); \
    template Tensor<T> transform_forward(const Tensor<T>&, const ParamStore<T>&, const PFFNetConfig&);           \
    template Tensor<T> decoder_forward(const Tensor<T>&, const std::vector<Tensor<T>>&, const ParamStore<T>&,    \
                                       const PFFNetConfig&);                                                     \
    template Tensor<T> forward(const Tensor<T>&, const ParamStore<T>&, const PFFNetConfig&, ForwardTrace<T>*);   \
    template Gradients<T> backward(const ForwardTrace<T>&, const Tensor<T>&, const ParamStore<T>&,               \
                                   const PFFNetConfig&);                                                         \
    template Tensor<T> forward_inference(const Tensor<T>&, const ParamStore<T>&, const PFFNetConfig&);

PFFNET_INSTANTIATE_MODEL(float)
PFFNET_INSTANTIATE_MODEL(double)

#undef PFFNET_INSTANTIATE_MODEL

}  // namespace pffnet
