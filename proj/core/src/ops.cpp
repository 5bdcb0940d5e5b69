#include "pffnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <string>
#include <vector>

namespace pffnet {
namespace {

// Upper bound on gather workspace elements per batch item (16 MiB of float).
constexpr std::size_t kWorkspaceBudget = std::size_t{1} << 22;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using Workspace = std::vector<T, TrackedAllocator<T>>;

// Geometry of one forward convolution over a single batch item.
struct ConvGeometry {
    std::size_t in_c, in_h, in_w;
    std::size_t out_c, out_h, out_w;
    std::size_t k, s, p;

    std::size_t patch() const { return in_c * k * k; }
    std::size_t rows_per_band() const {
        const std::size_t per_row = patch() * out_w;
        return std::clamp<std::size_t>(kWorkspaceBudget / std::max<std::size_t>(per_row, 1), 1, out_h);
    }
};

ConvGeometry geometry_of(const ConvSpec& spec, const Shape& in, const Shape& out) {
    return {in.c, in.h, in.w, out.c, out.h, out.w, spec.kernel, spec.stride, spec.pad};
}

// Valid output-x range [lo, hi) for kernel column kx, i.e. those x with 0 <= x*s - p + kx < in_w.
void valid_x_range(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
    const long s = static_cast<long>(g.s);
    const long off = static_cast<long>(kx) - static_cast<long>(g.p);
    long first = off >= 0 ? 0 : (-off + s - 1) / s;
    long last = (static_cast<long>(g.in_w) - 1 - off);
    last = last < 0 ? -1 : last / s;
    lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(g.out_w)));
    hi = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(g.out_w)));
}

// Gathers receptive fields of output rows [y0, y1) into cols (patch x band-pixels).
template <typename T>
void im2col_band(const T* in, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* cols) {
    const std::size_t band = (y1 - y0) * g.out_w;
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        const T* plane = in + ci * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                T* row = cols + ((ci * g.k + ky) * g.k + kx) * band;
                std::size_t lo = 0, hi = 0;
                valid_x_range(g, kx, lo, hi);
                for (std::size_t y = y0; y < y1; ++y) {
                    T* dst = row + (y - y0) * g.out_w;
                    const long iy = static_cast<long>(y * g.s + ky) - static_cast<long>(g.p);
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    std::fill(dst, dst + lo, T(0));
                    if (g.s == 1 && hi > lo) {
                        const std::size_t ix0 = lo + kx - g.p;
                        std::copy(src + ix0, src + ix0 + (hi - lo), dst + lo);
                    } else {
                        for (std::size_t x = lo; x < hi; ++x) dst[x] = src[x * g.s + kx - g.p];
                    }
                    std::fill(dst + hi, dst + g.out_w, T(0));
                }
            }
        }
    }
}

// Scatter-adds cols (patch x band-pixels) for output rows [y0, y1) back onto the input grid.
template <typename T>
void col2im_band(const T* cols, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* in) {
    const std::size_t band = (y1 - y0) * g.out_w;
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        T* plane = in + ci * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const T* row = cols + ((ci * g.k + ky) * g.k + kx) * band;
                std::size_t lo = 0, hi = 0;
                valid_x_range(g, kx, lo, hi);
                for (std::size_t y = y0; y < y1; ++y) {
                    const long iy = static_cast<long>(y * g.s + ky) - static_cast<long>(g.p);
                    if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
                    const T* src = row + (y - y0) * g.out_w;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t x = lo; x < hi; ++x) dst[x * g.s + kx - g.p] += src[x];
                }
            }
        }
    }
}

// out_item (out_c x out_h*out_w) = W * im2col(in_item) + bias
template <typename T>
void conv_forward_item(const T* in, const T* weight, std::span<const T> bias, const ConvGeometry& g, T* out) {
    const std::size_t patch = g.patch();
    const std::size_t rows = g.rows_per_band();
    const std::size_t hw = g.out_h * g.out_w;
    Workspace<T> cols(patch * rows * g.out_w);
    Eigen::Map<const RowMat<T>> w(weight, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(patch));
    for (std::size_t y0 = 0; y0 < g.out_h; y0 += rows) {
        const std::size_t y1 = std::min(g.out_h, y0 + rows);
        const auto band = static_cast<Eigen::Index>((y1 - y0) * g.out_w);
        im2col_band(in, g, y0, y1, cols.data());
        Eigen::Map<const RowMat<T>> c(cols.data(), static_cast<Eigen::Index>(patch), band);
        StridedMap<T> o(out + y0 * g.out_w, static_cast<Eigen::Index>(g.out_c), band,
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
        o.noalias() = w * c;
    }
    if (!bias.empty()) {
        for (std::size_t co = 0; co < g.out_c; ++co) {
            T* plane = out + co * hw;
            const T b = bias[co];
            for (std::size_t i = 0; i < hw; ++i) plane[i] += b;
        }
    }
}

// in_grad_item (zeroed by caller) += col2im(W^T * grad_out_item)
template <typename T>
void conv_input_grad_item(const T* grad_out, const T* weight, const ConvGeometry& g, T* in_grad) {
    const std::size_t patch = g.patch();
    const std::size_t rows = g.rows_per_band();
    const std::size_t hw = g.out_h * g.out_w;
    Workspace<T> cols(patch * rows * g.out_w);
    Eigen::Map<const RowMat<T>> w(weight, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(patch));
    for (std::size_t y0 = 0; y0 < g.out_h; y0 += rows) {
        const std::size_t y1 = std::min(g.out_h, y0 + rows);
        const auto band = static_cast<Eigen::Index>((y1 - y0) * g.out_w);
        ConstStridedMap<T> go(grad_out + y0 * g.out_w, static_cast<Eigen::Index>(g.out_c), band,
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
        Eigen::Map<RowMat<T>> c(cols.data(), static_cast<Eigen::Index>(patch), band);
        c.noalias() = w.transpose() * go;
        col2im_band(cols.data(), g, y0, y1, in_grad);
    }
}

// weight_grad (out_c x patch) += grad_out_item * im2col(in_item)^T
template <typename T>
void conv_weight_grad_item(const T* in, const T* grad_out, const ConvGeometry& g, T* weight_grad) {
    const std::size_t patch = g.patch();
    const std::size_t rows = g.rows_per_band();
    const std::size_t hw = g.out_h * g.out_w;
    Workspace<T> cols(patch * rows * g.out_w);
    Eigen::Map<RowMat<T>> gw(weight_grad, static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(patch));
    for (std::size_t y0 = 0; y0 < g.out_h; y0 += rows) {
        const std::size_t y1 = std::min(g.out_h, y0 + rows);
        const auto band = static_cast<Eigen::Index>((y1 - y0) * g.out_w);
        im2col_band(in, g, y0, y1, cols.data());
        Eigen::Map<const RowMat<T>> c(cols.data(), static_cast<Eigen::Index>(patch), band);
        ConstStridedMap<T> go(grad_out + y0 * g.out_w, static_cast<Eigen::Index>(g.out_c), band,
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
        gw.noalias() += go * c.transpose();
    }
}

// Per-item partial weight gradients, summed in batch order.
template <typename T>
Tensor<T> conv_weight_grad(const Tensor<T>& in, const Tensor<T>& grad_out, const ConvGeometry& g,
                           const Shape& weight_shape) {
    const std::size_t n = in.shape().n;
    std::vector<Tensor<T>> partial(n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
        partial[i] = Tensor<T>(weight_shape);
        conv_weight_grad_item(in.item(i), grad_out.item(i), g, partial[i].ptr());
    }
    Tensor<T> total(weight_shape);
    for (std::size_t i = 0; i < n; ++i) {
        auto dst = total.data();
        auto src = partial[i].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    return total;
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& grad_out) {
    const Shape& s = grad_out.shape();
    Tensor<T> out(bias_shape(s.c));
    for (std::size_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const T* plane = grad_out.item(n) + c * s.plane();
            for (std::size_t i = 0; i < s.plane(); ++i) acc += static_cast<double>(plane[i]);
        }
        out[c] = static_cast<T>(acc);
    }
    return out;
}

std::string axis_mismatch(const char* op, const char* axis, std::size_t got, std::size_t expected) {
    return std::string(op) + ": " + axis + " is " + std::to_string(got) + ", expected " + std::to_string(expected);
}

void check_conv_inputs(const char* op, const Shape& in, const Shape& weight, std::size_t bias_len,
                       const Shape& expected_weight, std::size_t expected_in_c, std::size_t expected_bias) {
    if (in.c != expected_in_c) throw ShapeError(axis_mismatch(op, "input channel axis", in.c, expected_in_c));
    if (weight.n != expected_weight.n)
        throw ShapeError(axis_mismatch(op, "weight axis 0", weight.n, expected_weight.n));
    if (weight.c != expected_weight.c)
        throw ShapeError(axis_mismatch(op, "weight axis 1", weight.c, expected_weight.c));
    if (weight.h != expected_weight.h)
        throw ShapeError(axis_mismatch(op, "weight kernel-height axis", weight.h, expected_weight.h));
    if (weight.w != expected_weight.w)
        throw ShapeError(axis_mismatch(op, "weight kernel-width axis", weight.w, expected_weight.w));
    if (bias_len != 0 && bias_len != expected_bias)
        throw ShapeError(axis_mismatch(op, "bias length", bias_len, expected_bias));
}

}  // namespace

void ConvSpec::validate() const {
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel must be odd and positive, got " + std::to_string(kernel));
    if (stride == 0) throw ConfigError("stride must be positive");
    if (in_channels == 0 || out_channels == 0) throw ConfigError("channel counts must be positive");
}

std::size_t ConvSpec::conv_out(std::size_t in) const {
    const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(kernel);
    if (span < 0) {
        throw ShapeError("convolution output would be empty: input " + std::to_string(in) + ", kernel " +
                         std::to_string(kernel) + ", pad " + std::to_string(pad));
    }
    return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t ConvSpec::deconv_out(std::size_t in) const {
    const long out = static_cast<long>(in * stride + kernel) - static_cast<long>(2 * pad) - 1;
    if (in == 0 || out <= 0) {
        throw ShapeError("transposed convolution output would be empty for input " + std::to_string(in));
    }
    return static_cast<std::size_t>(out);
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    const char* axis = nullptr;
    std::size_t x = 0, y = 0;
    if (a.n != b.n) axis = "batch", x = a.n, y = b.n;
    else if (a.c != b.c) axis = "channel", x = a.c, y = b.c;
    else if (a.h != b.h) axis = "height", x = a.h, y = b.h;
    else if (a.w != b.w) axis = "width", x = a.w, y = b.w;
    if (axis) {
        throw ShapeError(std::string(what) + ": " + axis + " axis differs (" + std::to_string(x) + " vs " +
                         std::to_string(y) + "), shapes " + a.str() + " and " + b.str());
    }
}

std::size_t conv_workspace_elements(const ConvSpec& spec, std::size_t out_w) {
    ConvGeometry g{spec.in_channels, 0, 0, spec.out_channels, 0, out_w, spec.kernel, spec.stride, spec.pad};
    const std::size_t per_row = g.patch() * out_w;
    const std::size_t rows = std::max<std::size_t>(kWorkspaceBudget / std::max<std::size_t>(per_row, 1), 1);
    return per_row * rows;
}

std::size_t deconv_workspace_elements(const ConvSpec& spec, std::size_t in_w) {
    ConvSpec as_conv = spec;
    std::swap(as_conv.in_channels, as_conv.out_channels);
    return conv_workspace_elements(as_conv, in_w);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec) {
    spec.validate();
    check_conv_inputs("conv2d", input.shape(), weight.shape(), bias.size(), spec.conv_weight_shape(),
                      spec.in_channels, spec.out_channels);
    const Shape& in = input.shape();
    Tensor<T> out(Shape{in.n, spec.out_channels, spec.conv_out(in.h), spec.conv_out(in.w)});
    const ConvGeometry g = geometry_of(spec, in, out.shape());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(in.n); ++i) {
        conv_forward_item(input.item(i), weight.ptr(), bias, g, out.item(i));
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                             const Tensor<T>& grad_out) {
    spec.validate();
    check_conv_inputs("conv2d_backward", input.shape(), weight.shape(), 0, spec.conv_weight_shape(),
                      spec.in_channels, spec.out_channels);
    const Shape& in = input.shape();
    const Shape expected{in.n, spec.out_channels, spec.conv_out(in.h), spec.conv_out(in.w)};
    require_same_shape(grad_out.shape(), expected, "conv2d_backward grad_out");
    const ConvGeometry g = geometry_of(spec, in, expected);

    ConvGrads<T> grads;
    grads.input = Tensor<T>(in);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(in.n); ++i) {
        conv_input_grad_item(grad_out.item(i), weight.ptr(), g, grads.input.item(i));
    }
    grads.weight = conv_weight_grad(input, grad_out, g, weight.shape());
    grads.bias = channel_sums(grad_out);
    return grads;
}

// A transposed convolution is the input-gradient of the forward convolution whose
// input has the deconv output's size: the same weight array, channel roles swapped.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias, const ConvSpec& spec) {
    spec.validate();
    check_conv_inputs("deconv2d", input.shape(), weight.shape(), bias.size(), spec.deconv_weight_shape(),
                      spec.in_channels, spec.out_channels);
    const Shape& in = input.shape();
    const Shape out_shape{in.n, spec.out_channels, spec.deconv_out(in.h), spec.deconv_out(in.w)};
    Tensor<T> out(out_shape);
    // Forward-conv geometry: conv input = deconv output, conv output = deconv input.
    const ConvGeometry g{spec.out_channels, out_shape.h, out_shape.w, spec.in_channels, in.h, in.w,
                         spec.kernel, spec.stride, spec.pad};
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(in.n); ++i) {
        conv_input_grad_item(input.item(i), weight.ptr(), g, out.item(i));
        if (!bias.empty()) {
            T* item = out.item(i);
            for (std::size_t c = 0; c < out_shape.c; ++c) {
                T* plane = item + c * out_shape.plane();
                for (std::size_t j = 0; j < out_shape.plane(); ++j) plane[j] += bias[c];
            }
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                               const Tensor<T>& grad_out) {
    spec.validate();
    check_conv_inputs("deconv2d_backward", input.shape(), weight.shape(), 0, spec.deconv_weight_shape(),
                      spec.in_channels, spec.out_channels);
    const Shape& in = input.shape();
    const Shape out_shape{in.n, spec.out_channels, spec.deconv_out(in.h), spec.deconv_out(in.w)};
    require_same_shape(grad_out.shape(), out_shape, "deconv2d_backward grad_out");
    const ConvGeometry g{spec.out_channels, out_shape.h, out_shape.w, spec.in_channels, in.h, in.w,
                         spec.kernel, spec.stride, spec.pad};

    ConvGrads<T> grads;
    grads.input = Tensor<T>(in);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(in.n); ++i) {
        conv_forward_item(grad_out.item(i), weight.ptr(), std::span<const T>{}, g, grads.input.item(i));
    }
    grads.weight = conv_weight_grad(grad_out, input, g, weight.shape());
    grads.bias = channel_sums(grad_out);
    return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    auto src = input.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
    Tensor<T> out(input.shape());
    auto x = input.data();
    auto g = grad_out.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] > T(0) ? g[i] : T(0);
    return out;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (T& v : x.data()) v = v > T(0) ? v : T(0);
}

template <typename T>
Tensor<T> add_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add_channels");
    Tensor<T> out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] + y[i];
    return out;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& b) {
    require_same_shape(acc.shape(), b.shape(), "add_inplace");
    auto dst = acc.data();
    auto src = b.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
double weighted_sum(const Tensor<T>& x, const Tensor<T>& weights) {
    require_same_shape(x.shape(), weights.shape(), "weighted_sum");
    double acc = 0.0;
    auto a = x.data();
    auto b = weights.data();
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

#define PFFNET_INSTANTIATE_OPS(T)                                                                           \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvSpec&);    \
    template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,             \
                                          const Tensor<T>&);                                               \
    template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, std::span<const T>, const ConvSpec&);  \
    template ConvGrads<T> deconv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,           \
                                            const Tensor<T>&);                                             \
    template Tensor<T> relu(const Tensor<T>&);                                                             \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                  \
    template void relu_inplace(Tensor<T>&);                                                                \
    template Tensor<T> add_channels(const Tensor<T>&, const Tensor<T>&);                                   \
    template void add_inplace(Tensor<T>&, const Tensor<T>&);                                               \
    template double weighted_sum(const Tensor<T>&, const Tensor<T>&);

PFFNET_INSTANTIATE_OPS(float)
PFFNET_INSTANTIATE_OPS(double)

#undef PFFNET_INSTANTIATE_OPS

}  // namespace pffnet
