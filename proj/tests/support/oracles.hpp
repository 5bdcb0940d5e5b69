#pragma once

// Direct nested-loop reference implementations, written without reference to the library
// kernels, for equivalence tests.

#include <cmath>
#include <cstddef>
#include <vector>

#include "pffnet/image_io.hpp"
#include "pffnet/model.hpp"
#include "pffnet/tensor.hpp"

namespace oracle {

using pffnet::Shape;
using pffnet::Tensor64;

// out[n][co][y][x] = b[co] + sum_{ci,ky,kx} in[n][ci][y*s-p+ky][x*s-p+kx] * w[co][ci][ky][kx]
inline Tensor64 conv2d(const Tensor64& in, const Tensor64& w, const std::vector<double>& b, std::size_t s,
                       std::size_t p) {
    const Shape& is = in.shape();
    const Shape& ws = w.shape();
    const long k = static_cast<long>(ws.h);
    const long oh = (static_cast<long>(is.h + 2 * p) - k) / static_cast<long>(s) + 1;
    const long ow = (static_cast<long>(is.w + 2 * p) - k) / static_cast<long>(s) + 1;
    Tensor64 out(Shape{is.n, ws.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (std::size_t n = 0; n < is.n; ++n)
        for (std::size_t co = 0; co < ws.n; ++co)
            for (long y = 0; y < oh; ++y)
                for (long x = 0; x < ow; ++x) {
                    double acc = b.empty() ? 0.0 : b[co];
                    for (std::size_t ci = 0; ci < is.c; ++ci)
                        for (long ky = 0; ky < k; ++ky)
                            for (long kx = 0; kx < k; ++kx) {
                                const long iy = y * static_cast<long>(s) - static_cast<long>(p) + ky;
                                const long ix = x * static_cast<long>(s) - static_cast<long>(p) + kx;
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(is.h) || ix >= static_cast<long>(is.w))
                                    continue;
                                acc += in.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
                            }
                    out.at(n, co, y, x) = acc;
                }
    return out;
}

// Transposed convolution by scattering every input sample through the kernel; weight is
// (in, out, k, k) and the output is (in - 1) * s + k - 2p + (s - 1) wide, i.e. exactly s times
// the input for k = 3, p = 1.
inline Tensor64 deconv2d(const Tensor64& in, const Tensor64& w, const std::vector<double>& b, std::size_t s,
                         std::size_t p) {
    const Shape& is = in.shape();
    const Shape& ws = w.shape();
    const long k = static_cast<long>(ws.h);
    const long oh = static_cast<long>(is.h * s) + k - 2 * static_cast<long>(p) - 1;
    const long ow = static_cast<long>(is.w * s) + k - 2 * static_cast<long>(p) - 1;
    Tensor64 out(Shape{is.n, ws.c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (std::size_t n = 0; n < is.n; ++n)
        for (std::size_t ci = 0; ci < is.c; ++ci)
            for (long y = 0; y < static_cast<long>(is.h); ++y)
                for (long x = 0; x < static_cast<long>(is.w); ++x)
                    for (std::size_t co = 0; co < ws.c; ++co)
                        for (long ky = 0; ky < k; ++ky)
                            for (long kx = 0; kx < k; ++kx) {
                                const long oy = y * static_cast<long>(s) - static_cast<long>(p) + ky;
                                const long ox = x * static_cast<long>(s) - static_cast<long>(p) + kx;
                                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                                out.at(n, co, oy, ox) += in.at(n, ci, y, x) * w.at(ci, co, ky, kx);
                            }
    if (!b.empty()) {
        for (std::size_t n = 0; n < is.n; ++n)
            for (std::size_t co = 0; co < ws.c; ++co)
                for (long y = 0; y < oh; ++y)
                    for (long x = 0; x < ow; ++x) out.at(n, co, y, x) += b[co];
    }
    return out;
}

inline double dot(const Tensor64& a, const Tensor64& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double psnr(const pffnet::ImageBuffer& a, const pffnet::ImageBuffer& b) {
    double sse = 0.0;
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x)
            for (std::size_t c = 0; c < a.channels; ++c) {
                const double d = static_cast<double>(a.at(y, x, c)) - static_cast<double>(b.at(y, x, c));
                sse += d * d;
            }
    const double mse = sse / static_cast<double>(a.height * a.width * a.channels);
    return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM with a direct 11x11 Gaussian (sigma 1.5) window at every fully inside position,
// variances taken around the local mean, averaged over channels.
inline double ssim(const pffnet::ImageBuffer& a, const pffnet::ImageBuffer& b) {
    constexpr int kWin = 11;
    double g[kWin][kWin];
    double total = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
            total += g[i][j];
        }
    for (auto& row : g)
        for (double& v : row) v /= total;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double channel_sum = 0.0;
    for (std::size_t c = 0; c < a.channels; ++c) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t y = 0; y + kWin <= a.height; ++y)
            for (std::size_t x = 0; x + kWin <= a.width; ++x) {
                double ma = 0.0, mb = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        ma += g[i][j] * a.at(y + i, x + j, c);
                        mb += g[i][j] * b.at(y + i, x + j, c);
                    }
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double da = a.at(y + i, x + j, c) - ma, db = b.at(y + i, x + j, c) - mb;
                        va += g[i][j] * da * da;
                        vb += g[i][j] * db * db;
                        cov += g[i][j] * da * db;
                    }
                sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        channel_sum += sum / static_cast<double>(count);
    }
    return channel_sum / static_cast<double>(a.channels);
}

// Parameter count tallied layer by layer: stem, encoder, residual blocks, decoder, output.
inline std::size_t param_count(std::size_t base, std::size_t levels, std::size_t blocks, std::size_t stem_k = 11,
                               std::size_t image_c = 3) {
    auto layer = [](std::size_t k, std::size_t in, std::size_t out) { return k * k * in * out + out; };
    std::size_t total = layer(stem_k, image_c, base);
    for (std::size_t i = 1; i <= levels; ++i) total += layer(3, base << (i - 1), base << i);
    total += blocks * 2 * layer(3, base << levels, base << levels);
    for (std::size_t j = levels; j >= 1; --j) total += layer(3, base << j, base << (j - 1));
    total += layer(3, base, image_c);
    return total;
}

}  // namespace oracle
