#include "pffnet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pffnet/checkpoint.hpp"
#include "pffnet/error.hpp"
#include "pffnet/memory.hpp"

namespace pffnet {
namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

void require_power_of_two(std::size_t m) {
    if (m == 0 || (m & (m - 1)) != 0) throw ConfigError("padding multiple must be a power of two, got " + std::to_string(m));
}

// Index of the sample mirrored into [0, n) without repeating the edge sample.
std::size_t reflect(std::size_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::size_t period = 2 * (n - 1);
    const std::size_t j = i % period;
    return j < n ? j : period - j;
}

struct AxisSpan {
    std::size_t start = 0;
    std::size_t ramp_lo = 0;
    std::size_t ramp_hi = 0;
};

// Evenly spaced tile origins, multiples of m, with neighbours overlapping by at least `overlap`.
std::vector<AxisSpan> axis_spans(std::size_t dim, std::size_t tile, std::size_t overlap, std::size_t m) {
    if (dim <= tile) return {AxisSpan{}};
    const std::size_t step = tile - overlap;
    const std::size_t n = 1 + (dim - tile + step - 1) / step;
    std::vector<AxisSpan> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k].start = k * (dim - tile) / (n - 1) / m * m;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const std::size_t shared = out[k].start + tile - out[k + 1].start;
        out[k].ramp_hi = shared;
        out[k + 1].ramp_lo = shared;
    }
    return out;
}

// Ramp weight of position i in a span of length len.
double axis_weight(std::size_t i, std::size_t len, std::size_t ramp_lo, std::size_t ramp_hi) {
    double w = 1.0;
    if (ramp_lo > 0) w = std::min(w, (static_cast<double>(i) + 0.5) / static_cast<double>(ramp_lo));
    if (ramp_hi > 0) w = std::min(w, (static_cast<double>(len - i) - 0.5) / static_cast<double>(ramp_hi));
    return w;
}

void clamp_unit(Tensor32& t) {
    for (float& v : t.data()) v = std::clamp(v, 0.0f, 1.0f);
}

ImageBuffer match_channels(const ImageBuffer& image, const PFFNetConfig& config) {
    if (image.channels == config.image_channels) return image;
    if (image.channels == 1 && config.image_channels == 3) return to_rgb(image);
    throw ShapeError("image has " + std::to_string(image.channels) + " channels, model expects " +
                     std::to_string(config.image_channels));
}

// Allocation replay of forward_inference, in elements.
struct AllocReplay {
    std::size_t live = 0;
    std::size_t peak = 0;
    std::size_t workspace_at_peak = 0;

    void alloc(std::size_t out, std::size_t workspace) {
        if (live + out + workspace > peak) {
            peak = live + out + workspace;
            workspace_at_peak = workspace;
        }
        live += out;
    }
    void free(std::size_t n) { live -= n; }
};

std::size_t conv_ws(const ConvSpec& spec, std::size_t out_h, std::size_t out_w) {
    const std::size_t full = spec.in_channels * spec.kernel * spec.kernel * out_h * out_w;
    return std::min(conv_workspace_elements(spec, out_w), full);
}

std::size_t deconv_ws(const ConvSpec& spec, std::size_t in_h, std::size_t in_w) {
    const std::size_t full = spec.out_channels * spec.kernel * spec.kernel * in_h * in_w;
    return std::min(deconv_workspace_elements(spec, in_w), full);
}

AllocReplay replay_forward(std::size_t h, std::size_t w, const PFFNetConfig& config) {
    const std::size_t levels = config.encoder_levels;
    std::vector<std::size_t> hs{h}, ws{w}, act;
    AllocReplay r;

    ConvSpec stem = ConvSpec::same(config.stem_kernel, config.image_channels, config.base_channels);
    act.push_back(config.base_channels * h * w);
    r.alloc(act[0], conv_ws(stem, h, w));
    for (std::size_t i = 1; i <= levels; ++i) {
        const ConvSpec s = ConvSpec::down(config.channels_at(i - 1), config.channels_at(i));
        hs.push_back(s.conv_out(hs.back()));
        ws.push_back(s.conv_out(ws.back()));
        act.push_back(config.channels_at(i) * hs[i] * ws[i]);
        r.alloc(act[i], conv_ws(s, hs[i], ws[i]));
    }

    const ConvSpec res = ConvSpec::same(3, config.bottleneck_channels(), config.bottleneck_channels());
    const std::size_t bott = act[levels];
    r.alloc(bott, 0);  // running copy of D_L
    for (std::size_t b = 0; b < config.res_blocks; ++b) {
        r.alloc(bott, conv_ws(res, hs[levels], ws[levels]));
        r.alloc(bott, conv_ws(res, hs[levels], ws[levels]));
        r.free(bott);
        r.free(bott);
    }
    r.free(bott);  // D_L

    std::size_t current = bott;
    for (std::size_t j = levels; j >= 1; --j) {
        const ConvSpec s = ConvSpec::up(config.channels_at(j), config.channels_at(j - 1));
        r.alloc(act[j - 1], deconv_ws(s, hs[j], ws[j]));
        r.free(current);
        r.free(act[j - 1]);  // D_{j-1}
        current = act[j - 1];
    }
    const ConvSpec out = ConvSpec::same(3, config.base_channels, config.image_channels);
    r.alloc(config.image_channels * h * w, conv_ws(out, h, w));
    return r;
}

}  // namespace

template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& image, std::size_t m, CropRecord* record) {
    require_power_of_two(m);
    const Shape& s = image.shape();
    if (s.h == 0 || s.w == 0) throw ShapeError("cannot pad an empty image");
    if (record) *record = {s.h, s.w};
    const Shape out_shape{s.n, s.c, round_up(s.h, m), round_up(s.w, m)};
    if (out_shape == s) return image;
    Tensor<T> out(out_shape);
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < out_shape.h; ++y) {
                const std::size_t sy = reflect(y, s.h);
                for (std::size_t x = 0; x < out_shape.w; ++x) out.at(n, c, y, x) = image.at(n, c, sy, reflect(x, s.w));
            }
    return out;
}

template <typename T>
Tensor<T> unpad(const Tensor<T>& padded, const CropRecord& record) {
    const Shape& s = padded.shape();
    if (record.height > s.h || record.width > s.w) {
        throw ShapeError("crop record " + std::to_string(record.height) + "x" + std::to_string(record.width) +
                         " exceeds padded image " + s.str());
    }
    if (record.height == s.h && record.width == s.w) return padded;
    Tensor<T> out(Shape{s.n, s.c, record.height, record.width});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < record.height; ++y)
                std::copy_n(padded.ptr() + padded.offset(n, c, y, 0), record.width, &out.at(n, c, y, 0));
    return out;
}

ImageBuffer pad_to_multiple(const ImageBuffer& image, std::size_t m, CropRecord* record) {
    require_power_of_two(m);
    if (image.height == 0 || image.width == 0) throw ShapeError("cannot pad an empty image");
    if (record) *record = {image.height, image.width};
    ImageBuffer out(round_up(image.height, m), round_up(image.width, m), image.channels);
    out.path = image.path;
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x)
            for (std::size_t c = 0; c < image.channels; ++c)
                out.at(y, x, c) = image.at(reflect(y, image.height), reflect(x, image.width), c);
    return out;
}

ImageBuffer unpad(const ImageBuffer& padded, const CropRecord& record) {
    if (record.height > padded.height || record.width > padded.width) {
        throw ShapeError("crop record exceeds padded image dims");
    }
    ImageBuffer out(record.height, record.width, padded.channels);
    out.path = padded.path;
    for (std::size_t y = 0; y < record.height; ++y) {
        const float* src = &padded.pixels[y * padded.width * padded.channels];
        std::copy_n(src, record.width * padded.channels, &out.pixels[y * record.width * padded.channels]);
    }
    return out;
}

template <typename T>
Tensor<T> predict(const Tensor<T>& images, const ParamStore<T>& params, const PFFNetConfig& config) {
    CropRecord record;
    Tensor<T> padded = pad_to_multiple(images, config.divisor(), &record);
    Tensor<T> out = forward_inference(padded, params, config);
    padded.release();
    return unpad(out, record);
}

Model load_model(const std::string& checkpoint_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    return {ckpt.config.model, std::move(ckpt.state.params)};
}

ImageBuffer dehaze(const ImageBuffer& image, const Model& model) {
    CropRecord record;
    Tensor32 padded;
    {
        const Tensor32 input = image_to_tensor<float>(match_channels(image, model.config));
        padded = pad_to_multiple(input, model.config.divisor(), &record);
    }
    Tensor32 out = forward_inference(padded, model.params, model.config);
    padded.release();
    out = unpad(out, record);
    clamp_unit(out);
    ImageBuffer result = tensor_to_image(out);
    result.path = image.path;
    return result;
}

double TilePlan::weight(std::size_t t, std::size_t y, std::size_t x) const {
    const TileRect& r = tiles.at(t);
    if (y < r.y0 || y >= r.y0 + r.height || x < r.x0 || x >= r.x0 + r.width) return 0.0;
    return axis_weight(y - r.y0, r.height, r.ramp_top, r.ramp_bottom) *
           axis_weight(x - r.x0, r.width, r.ramp_left, r.ramp_right);
}

double TilePlan::partition_error() const {
    std::vector<double> sum(height * width, 0.0);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const TileRect& r = tiles[t];
        for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
            for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) sum[y * width + x] += weight(t, y, x);
    }
    std::vector<double> normalized(height * width, 0.0);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const TileRect& r = tiles[t];
        for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
            for (std::size_t x = r.x0; x < r.x0 + r.width; ++x)
                normalized[y * width + x] += weight(t, y, x) / sum[y * width + x];
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
        if (sum[i] <= 0.0) {
            throw ConfigError("tile plan leaves pixel (" + std::to_string(i / width) + ", " +
                              std::to_string(i % width) + ") uncovered");
        }
        worst = std::max(worst, std::abs(normalized[i] - 1.0));
    }
    return worst;
}

TilePlan make_tile_plan(std::size_t height, std::size_t width, std::size_t tile, std::size_t overlap,
                        std::size_t multiple) {
    if (multiple == 0) throw ConfigError("tile multiple must be positive");
    if (tile < 64) throw ConfigError("tile must be at least 64, got " + std::to_string(tile));
    if (tile % multiple != 0) throw ConfigError("tile must be a multiple of " + std::to_string(multiple));
    if (overlap % multiple != 0) throw ConfigError("overlap must be a multiple of " + std::to_string(multiple));
    if (2 * overlap >= tile) throw ConfigError("overlap must be less than half the tile size");
    if (height == 0 || width == 0 || height % multiple != 0 || width % multiple != 0) {
        throw ConfigError("tiled image dims must be positive multiples of " + std::to_string(multiple));
    }
    TilePlan plan;
    plan.tile = tile;
    plan.overlap = overlap;
    plan.height = height;
    plan.width = width;
    const std::size_t th = std::min(tile, height), tw = std::min(tile, width);
    for (const AxisSpan& sy : axis_spans(height, tile, overlap, multiple))
        for (const AxisSpan& sx : axis_spans(width, tile, overlap, multiple))
            plan.tiles.push_back({sy.start, sx.start, th, tw, sy.ramp_lo, sy.ramp_hi, sx.ramp_lo, sx.ramp_hi});
    return plan;
}

ImageBuffer dehaze_tiled(const ImageBuffer& image, const Model& model, std::size_t tile, std::size_t overlap,
                         TiledStats* stats) {
    const std::size_t baseline = MemoryTracker::current();
    MemoryTracker::reset_peak();

    const PFFNetConfig& config = model.config;
    CropRecord record;
    Tensor32 padded;
    {
        const Tensor32 input = image_to_tensor<float>(match_channels(image, config));
        padded = pad_to_multiple(input, config.divisor(), &record);
    }
    const Shape ps = padded.shape();
    const TilePlan plan = make_tile_plan(ps.h, ps.w, tile, overlap, config.divisor());

    Tensor32 acc(ps);
    Tensor32 wsum(Shape{1, 1, ps.h, ps.w});
    for (std::size_t t = 0; t < plan.tiles.size(); ++t) {
        const TileRect& r = plan.tiles[t];
        Tensor32 piece(Shape{1, ps.c, r.height, r.width});
        for (std::size_t c = 0; c < ps.c; ++c)
            for (std::size_t y = 0; y < r.height; ++y)
                std::copy_n(&padded.at(0, c, r.y0 + y, r.x0), r.width, &piece.at(0, c, y, 0));
        const Tensor32 out = forward_inference(piece, model.params, config);
        piece.release();

        std::vector<float> wy(r.height), wx(r.width);
        for (std::size_t y = 0; y < r.height; ++y)
            wy[y] = static_cast<float>(axis_weight(y, r.height, r.ramp_top, r.ramp_bottom));
        for (std::size_t x = 0; x < r.width; ++x)
            wx[x] = static_cast<float>(axis_weight(x, r.width, r.ramp_left, r.ramp_right));
        for (std::size_t y = 0; y < r.height; ++y) {
            for (std::size_t x = 0; x < r.width; ++x) wsum.at(0, 0, r.y0 + y, r.x0 + x) += wy[y] * wx[x];
            for (std::size_t c = 0; c < ps.c; ++c)
                for (std::size_t x = 0; x < r.width; ++x)
                    acc.at(0, c, r.y0 + y, r.x0 + x) += wy[y] * wx[x] * out.at(0, c, y, x);
        }
    }
    padded.release();
    for (std::size_t c = 0; c < ps.c; ++c)
        for (std::size_t i = 0; i < ps.plane(); ++i) acc.item(0)[c * ps.plane() + i] /= wsum[i];
    wsum.release();

    Tensor32 out = unpad(acc, record);
    acc.release();
    clamp_unit(out);
    ImageBuffer result = tensor_to_image(out);
    result.path = image.path;

    if (stats) {
        stats->tiles = plan.tiles.size();
        stats->peak_bytes = MemoryTracker::peak() - std::min(baseline, MemoryTracker::peak());
    }
    return result;
}

std::string MemoryEstimate::describe() const {
    auto mib = [](std::size_t b) { return static_cast<double>(b) / (1024.0 * 1024.0); };
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "padded input      %zu x %zu%s\n"
                  "parameters        %10.1f MiB  (param_count x 4 bytes)\n"
                  "image buffers     %10.1f MiB  (padded input%s)\n"
                  "activations       %10.1f MiB  (peak live set: retained skips D_0..D_L + layer in flight)\n"
                  "gather workspace  %10.1f MiB  (im2col band buffer at that peak)\n"
                  "total             %10.1f MiB\n",
                  padded_height, padded_width,
                  tiles > 1 ? (", " + std::to_string(tiles) + " tiles").c_str() : "", mib(parameter_bytes),
                  mib(io_bytes), tiles > 1 ? ", tile copy, blend accumulator and weight sum" : "",
                  mib(activation_bytes), mib(workspace_bytes), mib(total()));
    return buf;
}

MemoryEstimate memory_estimate(std::size_t height, std::size_t width, const PFFNetConfig& config, std::size_t tile,
                               std::size_t overlap) {
    config.validate();
    const std::size_t m = config.divisor();
    constexpr std::size_t bytes = sizeof(float);
    MemoryEstimate e;
    e.padded_height = round_up(height, m);
    e.padded_width = round_up(width, m);
    e.parameter_bytes = param_count(config) * bytes;
    const std::size_t image = config.image_channels * e.padded_height * e.padded_width;

    std::size_t fh = e.padded_height, fw = e.padded_width;
    if (tile > 0) {
        const TilePlan plan = make_tile_plan(e.padded_height, e.padded_width, tile, overlap, m);
        e.tiles = plan.tiles.size();
        fh = plan.tiles.front().height;
        fw = plan.tiles.front().width;
        // padded input + accumulator + weight sum + the tile being processed
        e.io_bytes = (2 * image + e.padded_height * e.padded_width + config.image_channels * fh * fw) * bytes;
    } else {
        e.io_bytes = image * bytes;
    }
    const AllocReplay r = replay_forward(fh, fw, config);
    e.activation_bytes = (r.peak - r.workspace_at_peak) * bytes;
    e.workspace_bytes = r.workspace_at_peak * bytes;
    return e;
}

template Tensor<float> pad_to_multiple(const Tensor<float>&, std::size_t, CropRecord*);
template Tensor<double> pad_to_multiple(const Tensor<double>&, std::size_t, CropRecord*);
template Tensor<float> unpad(const Tensor<float>&, const CropRecord&);
template Tensor<double> unpad(const Tensor<double>&, const CropRecord&);
template Tensor<float> predict(const Tensor<float>&, const ParamStore<float>&, const PFFNetConfig&);
template Tensor<double> predict(const Tensor<double>&, const ParamStore<double>&, const PFFNetConfig&);

}  // namespace pffnet
