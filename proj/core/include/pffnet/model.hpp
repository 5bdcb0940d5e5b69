#pragma once

// Encoder / residual transformation / decoder network with progressive skip fusion.
//
//   D_0 = relu(conv_k0(I))                       stem, stride 1
//   D_i = relu(conv3x3/2(D_{i-1}))               i = 1..L, channels double
//   U_L = D_L + Psi(D_L)                         Psi = chain of residual blocks
//   F_{j-1} = deconv3x3/2(relu(U_j))             j = L..1, channels halve
//   U_{j-1} = D_{j-1} + F_{j-1}                  (F_{j-1} alone without skips)
//   J = conv3x3(relu(U_0))
//
// Parameters live in a ParamStore keyed by layer path ("enc.0.weight", "res.07.conv1.bias",
// "dec.3.weight", "out.bias", ...).

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pffnet/ops.hpp"
#include "pffnet/tensor.hpp"

namespace pffnet {

struct PFFNetConfig {
    std::size_t stem_kernel = 11;
    std::size_t base_channels = 16;
    std::size_t encoder_levels = 4;
    std::size_t res_blocks = 18;
    bool skip_connections = true;
    std::size_t image_channels = 3;

    // Throws ConfigError on an unusable configuration (including res_blocks == 0).
    void validate() const;

    std::size_t channels_at(std::size_t level) const { return base_channels << level; }
    std::size_t bottleneck_channels() const { return channels_at(encoder_levels); }
    // Input height and width must be multiples of this.
    std::size_t divisor() const { return std::size_t{1} << encoder_levels; }

    static PFFNetConfig full() { return {}; }
    // Desk-scale profile: base 8, 2 levels, 2 blocks.
    static PFFNetConfig tiny() { return {11, 8, 2, 2, true, 3}; }

    friend bool operator==(const PFFNetConfig&, const PFFNetConfig&) = default;
};

enum class LayerKind { Conv, Deconv };

struct LayerSpec {
    std::string name;  // key prefix, e.g. "enc.2"
    LayerKind kind = LayerKind::Conv;
    ConvSpec conv;

    Shape weight_shape() const {
        return kind == LayerKind::Conv ? conv.conv_weight_shape() : conv.deconv_weight_shape();
    }
    std::size_t weight_count() const { return weight_shape().numel(); }
    std::size_t fan_in() const { return conv.in_channels * conv.kernel * conv.kernel; }
};

// Every parameterized layer in execution order. Does not validate res_blocks, so a
// zero-block config enumerates encoder and decoder only.
std::vector<LayerSpec> layer_list(const PFFNetConfig& config);

// Residual block key prefix, zero-padded so lexical order equals block order.
std::string res_block_name(std::size_t block);

std::size_t param_count(const PFFNetConfig& config);

template <typename T>
class ParamStore {
public:
    using Map = std::map<std::string, Tensor<T>>;

    void insert(const std::string& key, Tensor<T> value) {
        tensors_.insert_or_assign(key, std::move(value));
        ++generation_;
    }

    bool contains(const std::string& key) const { return tensors_.count(key) != 0; }
    const Tensor<T>& at(const std::string& key) const;
    // Mutable access counts as a modification: traces taken before it become stale.
    Tensor<T>& mutable_at(const std::string& key);

    const Tensor<T>& weight(const std::string& layer) const { return at(layer + ".weight"); }
    std::span<const T> bias(const std::string& layer) const { return at(layer + ".bias").data(); }

    std::size_t size() const { return tensors_.size(); }
    std::size_t element_count() const;
    std::vector<std::string> keys() const;

    typename Map::const_iterator begin() const { return tensors_.begin(); }
    typename Map::const_iterator end() const { return tensors_.end(); }

    std::uint64_t generation() const { return generation_; }
    void touch() { ++generation_; }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [k, v] : tensors_) out.insert(k, v.template cast<U>());
        return out;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.tensors_ == b.tensors_; }

private:
    Map tensors_;
    std::uint64_t generation_ = 0;
};

// Zero-filled store with exactly the keys and shapes of `config`.
template <typename T>
ParamStore<T> zero_params(const PFFNetConfig& config);

// Weights ~ N(0, 2 / fan_in), biases zero. Values are drawn in double and rounded to T,
// so float and double stores from one seed agree up to rounding.
template <typename T>
ParamStore<T> init_params(const PFFNetConfig& config, std::uint64_t seed);

// Throws ConfigError naming the first missing, unexpected or mis-shaped key.
template <typename T>
void check_params(const ParamStore<T>& params, const PFFNetConfig& config);

// Activations retained by forward() for backward().
template <typename T>
struct ForwardTrace {
    PFFNetConfig config;
    std::uint64_t generation = 0;
    const void* store = nullptr;

    Tensor<T> input;
    std::vector<Tensor<T>> skips;         // D_0 .. D_L
    std::vector<Tensor<T>> block_inputs;  // x_b, with x_0 = D_L
    std::vector<Tensor<T>> block_mids;    // relu(conv1(x_b))
    std::vector<Tensor<T>> fused;         // fused[i] = U_i, i = 0 .. L
    Tensor<T> output;
};

template <typename T>
struct Gradients {
    ParamStore<T> params;
    Tensor<T> input;
};

template <typename T>
std::vector<Tensor<T>> encoder_forward(const Tensor<T>& image, const ParamStore<T>& params,
                                       const PFFNetConfig& config);

template <typename T>
Tensor<T> transform_forward(const Tensor<T>& bottleneck, const ParamStore<T>& params, const PFFNetConfig& config);

// skips holds D_0 .. D_{L-1} (a longer vector, e.g. the full encoder output, is accepted).
template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& bottleneck_out, const std::vector<Tensor<T>>& skips,
                          const ParamStore<T>& params, const PFFNetConfig& config);

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const ParamStore<T>& params, const PFFNetConfig& config,
                  ForwardTrace<T>* trace);

template <typename T>
Gradients<T> backward(const ForwardTrace<T>& trace, const Tensor<T>& grad_output, const ParamStore<T>& params,
                      const PFFNetConfig& config);

// Forward pass without a trace; releases each activation as soon as it is consumed.
template <typename T>
Tensor<T> forward_inference(const Tensor<T>& image, const ParamStore<T>& params, const PFFNetConfig& config);

struct LayerShape {
    std::string layer;
    Shape dims;  // n = 1
};

struct ShapePlan {
    std::vector<LayerShape> layers;
    Shape bottleneck;
    bool divisible = true;
};

ShapePlan shape_plan(std::size_t height, std::size_t width, const PFFNetConfig& config);

}  // namespace pffnet
