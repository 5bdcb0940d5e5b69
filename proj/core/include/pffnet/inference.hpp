#pragma once

// Whole-image and tiled dehazing of arbitrary-size images, and the memory estimator.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pffnet/image_io.hpp"
#include "pffnet/model.hpp"

namespace pffnet {

// Original spatial dims of a padded image.
struct CropRecord {
    std::size_t height = 0;
    std::size_t width = 0;
};

// Reflect-pads bottom and right up to the next multiples of m (a power of two). Reflection
// excludes the edge sample and repeats as often as needed, so 1-pixel images work too.
template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& image, std::size_t m, CropRecord* record = nullptr);
template <typename T>
Tensor<T> unpad(const Tensor<T>& padded, const CropRecord& record);

ImageBuffer pad_to_multiple(const ImageBuffer& image, std::size_t m, CropRecord* record = nullptr);
ImageBuffer unpad(const ImageBuffer& padded, const CropRecord& record);

// Reflect-padded forward pass cropped back to the input dims; no clamping.
template <typename T>
Tensor<T> predict(const Tensor<T>& images, const ParamStore<T>& params, const PFFNetConfig& config);

struct Model {
    PFFNetConfig config;
    ParamStore<float> params;
};

Model load_model(const std::string& checkpoint_path);

// pad, forward, unpad, clamp to [0, 1]. Single-channel inputs are replicated to RGB when
// the model expects three channels.
ImageBuffer dehaze(const ImageBuffer& image, const Model& model);

inline constexpr std::size_t kDefaultTile = 1024;
inline constexpr std::size_t kDefaultOverlap = 128;

struct TileRect {
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    // Blend ramp lengths on each side; the actual overlap with the neighbour, 0 at image borders.
    std::size_t ramp_top = 0;
    std::size_t ramp_bottom = 0;
    std::size_t ramp_left = 0;
    std::size_t ramp_right = 0;
};

// Tiles over a padded image of height x width. Neighbouring tiles overlap by at least
// `overlap` and are spaced evenly; blend weights ramp linearly across each overlap and
// stay 1 at image borders.
struct TilePlan {
    std::size_t tile = kDefaultTile;
    std::size_t overlap = kDefaultOverlap;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<TileRect> tiles;

    // Unnormalized weight of tile t at image pixel (y, x) inside it.
    double weight(std::size_t t, std::size_t y, std::size_t x) const;
    // Largest |sum_t w_t / sum_t w_t - 1| over the image, i.e. partition-of-unity error
    // after normalization. Also throws if some pixel is not covered.
    double partition_error() const;
};

// Throws ConfigError unless tile >= 64, overlap < tile / 2 and both are multiples of
// `multiple`. height and width must already be multiples of `multiple`.
TilePlan make_tile_plan(std::size_t height, std::size_t width, std::size_t tile = kDefaultTile,
                        std::size_t overlap = kDefaultOverlap, std::size_t multiple = 16);

struct TiledStats {
    std::size_t tiles = 0;
    std::size_t peak_bytes = 0;  // tracked allocation peak during the call
};

ImageBuffer dehaze_tiled(const ImageBuffer& image, const Model& model, std::size_t tile = kDefaultTile,
                         std::size_t overlap = kDefaultOverlap, TiledStats* stats = nullptr);

// Bytes held at the peak of an inference run, assuming 32-bit elements and batch 1.
struct MemoryEstimate {
    std::size_t parameter_bytes = 0;
    std::size_t io_bytes = 0;          // input, padding copy, output (and blend buffers when tiled)
    std::size_t activation_bytes = 0;  // largest live activation set along the forward path
    std::size_t workspace_bytes = 0;   // gather buffer live at that point
    std::size_t padded_height = 0;
    std::size_t padded_width = 0;
    std::size_t tiles = 1;

    std::size_t total() const { return parameter_bytes + io_bytes + activation_bytes + workspace_bytes; }
    std::string describe() const;
};

// Replays forward_inference's allocation order (skips D_0..D_L retained until fused,
// residual temporaries, per-layer gather buffers) and reports the peak. With tile > 0 the
// activation part covers one tile and io adds the full-size blend accumulators.
MemoryEstimate memory_estimate(std::size_t height, std::size_t width, const PFFNetConfig& config,
                               std::size_t tile = 0, std::size_t overlap = 0);

}  // namespace pffnet
