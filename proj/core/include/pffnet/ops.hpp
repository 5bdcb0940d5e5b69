#pragma once

// Differentiable tensor operations used by the network: convolution, transposed
// convolution, ReLU, elementwise addition and a scalar reduction, each with a
// hand-written backward pass.
//
// Convolutions are lowered to patch-gather + GEMM over bands of output rows so the
// gather workspace stays bounded regardless of image size. Batch items are processed
// independently; weight and bias gradients are reduced across the batch in index
// order, so results do not depend on the number of threads.

#include <cstddef>
#include <span>

#include "pffnet/tensor.hpp"

namespace pffnet {

struct ConvSpec {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    // Throws ConfigError unless kernel is odd and positive and stride/channels are positive.
    void validate() const;

    // Spatial size after a forward convolution; throws ShapeError if it would be <= 0.
    std::size_t conv_out(std::size_t in) const;
    // Spatial size after a transposed convolution. An implicit (stride - 1) output padding
    // on the bottom/right makes k=3, s=2, pad=1 exactly double the input.
    std::size_t deconv_out(std::size_t in) const;

    // Weight dims: (out, in, k, k) for conv2d, (in, out, k, k) for deconv2d.
    Shape conv_weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
    Shape deconv_weight_shape() const { return {in_channels, out_channels, kernel, kernel}; }

    // Zero-padded "same" convolution: pad = (k - 1) / 2.
    static ConvSpec same(std::size_t kernel, std::size_t in, std::size_t out) {
        return {kernel, 1, (kernel - 1) / 2, in, out};
    }
    static ConvSpec down(std::size_t in, std::size_t out) { return {3, 2, 1, in, out}; }
    static ConvSpec up(std::size_t in, std::size_t out) { return {3, 2, 1, in, out}; }
};

// Bias tensors are stored as (out, 1, 1, 1).
inline Shape bias_shape(std::size_t out) { return {out, 1, 1, 1}; }

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                             const Tensor<T>& grad_out);

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec);

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                               const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Gradient at exactly zero is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
void relu_inplace(Tensor<T>& x);

// Elementwise sum of equally shaped tensors; no broadcasting. The backward pass hands
// grad_out to both operands unchanged.
template <typename T>
Tensor<T> add_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& b);

// Scalar reduction sum(x * weights). Its gradient with respect to x is `weights`.
template <typename T>
double weighted_sum(const Tensor<T>& x, const Tensor<T>& weights);

// Throws ShapeError naming the first axis on which the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

// Elements of gather workspace a single conv2d/deconv2d call holds per batch item.
std::size_t conv_workspace_elements(const ConvSpec& spec, std::size_t out_w);
std::size_t deconv_workspace_elements(const ConvSpec& spec, std::size_t in_w);

}  // namespace pffnet
