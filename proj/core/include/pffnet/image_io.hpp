#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pffnet/tensor.hpp"

namespace pffnet {

// Interleaved (h, w, c) image with values in [0, 1]; c is 1 or 3.
struct ImageBuffer {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> pixels;
    std::string path;

    ImageBuffer() = default;
    ImageBuffer(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

    bool same_dims(const ImageBuffer& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// PNG (8/16-bit gray, gray+alpha, RGB, RGBA, palette) and binary PGM/PPM (P5/P6, maxval up
// to 65535). Alpha is dropped. Values are scaled by the format's maximum and clamped to [0, 1].
// Throws IoError if the file cannot be read, FormatError if it is malformed or unsupported.
ImageBuffer load_image(const std::string& path);

// Format follows the extension: .png, .pgm/.ppm (binary). Values are clamped to [0, 1] and
// rounded to the nearest code. 16-bit output is supported for every format.
void save_image(const ImageBuffer& image, const std::string& path, int bit_depth = 8);

// (1, c, h, w) tensor view of an image, and back (batch item `item`).
template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& image);

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& tensor, std::size_t item = 0);

// Single-channel image replicated to three channels.
ImageBuffer to_rgb(const ImageBuffer& image);

}  // namespace pffnet
