#include "pffnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace pffnet {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

unsigned quantize(float v, unsigned max_code) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0) * max_code;
    return static_cast<unsigned>(std::lround(c));
}

// ---- PNG -----------------------------------------------------------------

void png_error_handler(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<char*>(png_get_error_ptr(png));
    std::snprintf(buf, 256, "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

// Decodes to 8- or 16-bit gray or RGB samples. Returns false and fills `err` on failure.
bool decode_png(std::FILE* fp, std::vector<unsigned char>& raw, png_uint_32& width, png_uint_32& height,
                int& channels, int& bit_depth, char* err) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
    png_read_update_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    channels = png_get_channels(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

ImageBuffer load_png(const std::string& path, std::FILE* fp) {
    std::vector<unsigned char> raw;
    png_uint_32 width = 0, height = 0;
    int channels = 0, bit_depth = 0;
    char err[256] = "libpng initialisation failed";
    if (!decode_png(fp, raw, width, height, channels, bit_depth, err)) throw FormatError(path, err);
    if (channels != 1 && channels != 3) {
        throw FormatError(path, "unsupported PNG channel count " + std::to_string(channels));
    }
    ImageBuffer img(height, width, static_cast<std::size_t>(channels));
    const std::size_t count = img.pixels.size();
    if (bit_depth == 16) {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint16_t v;
            std::memcpy(&v, raw.data() + 2 * i, 2);
            img.pixels[i] = static_cast<float>(v / 65535.0);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) img.pixels[i] = static_cast<float>(raw[i] / 255.0);
    }
    return img;
}

bool encode_png(std::FILE* fp, const std::vector<unsigned char>& raw, png_uint_32 width, png_uint_32 height,
                int channels, int bit_depth, char* err) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        return false;
    }
    std::vector<png_bytep> rows(height);
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = const_cast<unsigned char*>(raw.data()) + y * stride;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, width, height, bit_depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

// ---- PNM -----------------------------------------------------------------

class PnmReader {
public:
    PnmReader(const std::string& path, std::vector<unsigned char> bytes) : path_(path), bytes_(std::move(bytes)) {}

    ImageBuffer read() {
        if (bytes_.size() < 2 || bytes_[0] != 'P' || (bytes_[1] != '5' && bytes_[1] != '6')) {
            throw FormatError(path_, "not a binary PGM/PPM file");
        }
        pos_ = 2;
        const std::size_t channels = bytes_[1] == '5' ? 1 : 3;
        const std::size_t width = next_number();
        const std::size_t height = next_number();
        const std::size_t maxval = next_number();
        if (width == 0 || height == 0) throw FormatError(path_, "zero image dimension");
        if (maxval == 0 || maxval > 65535) throw FormatError(path_, "maxval out of range");
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError(path_, "malformed header");
        ++pos_;

        const std::size_t bytes_per = maxval > 255 ? 2 : 1;
        ImageBuffer img(height, width, channels);
        const std::size_t count = img.pixels.size();
        if (bytes_.size() - pos_ < count * bytes_per) throw FormatError(path_, "truncated pixel data");
        const unsigned char* p = bytes_.data() + pos_;
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned v = bytes_per == 2 ? (unsigned{p[2 * i]} << 8) | p[2 * i + 1] : p[i];
            img.pixels[i] = static_cast<float>(std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval)));
        }
        return img;
    }

private:
    std::size_t next_number() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw FormatError(path_, "malformed header");
        std::size_t v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > (std::size_t{1} << 31)) throw FormatError(path_, "header value too large");
            ++pos_;
        }
        return v;
    }

    std::string path_;
    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path, "write failed");
}

std::vector<unsigned char> pack_samples(const ImageBuffer& img, int bit_depth, bool big_endian) {
    const unsigned max_code = bit_depth == 16 ? 65535u : 255u;
    std::vector<unsigned char> raw;
    raw.reserve(img.pixels.size() * (bit_depth / 8));
    for (float v : img.pixels) {
        const unsigned q = quantize(v, max_code);
        if (bit_depth == 16) {
            const auto hi = static_cast<unsigned char>(q >> 8);
            const auto lo = static_cast<unsigned char>(q & 0xff);
            if (big_endian) {
                raw.push_back(hi);
                raw.push_back(lo);
            } else {
                raw.push_back(lo);
                raw.push_back(hi);
            }
        } else {
            raw.push_back(static_cast<unsigned char>(q));
        }
    }
    return raw;
}

}  // namespace

ImageBuffer load_image(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(path, "cannot open for reading");
    unsigned char sig[8] = {};
    const std::size_t got = std::fread(sig, 1, sizeof sig, fp.get());
    ImageBuffer img;
    if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) {
        std::rewind(fp.get());
        img = load_png(path, fp.get());
    } else if (got >= 2 && sig[0] == 'P') {
        fp.reset();
        img = PnmReader(path, read_all(path)).read();
    } else {
        throw FormatError(path, "unrecognised image format (expected PNG, P5 or P6)");
    }
    img.path = path;
    return img;
}

void save_image(const ImageBuffer& image, const std::string& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw ConfigError("bit_depth must be 8 or 16");
    if (image.channels != 1 && image.channels != 3) throw ShapeError("images must have 1 or 3 channels");
    if (image.pixels.size() != image.height * image.width * image.channels || image.pixels.empty()) {
        throw ShapeError("image buffer size does not match its dimensions");
    }
    const std::string ext = lower_extension(path);
    if (ext == "png") {
        const auto raw = pack_samples(image, bit_depth, false);
        FilePtr fp(std::fopen(path.c_str(), "wb"));
        if (!fp) throw IoError(path, "cannot open for writing");
        char err[256] = "libpng initialisation failed";
        if (!encode_png(fp.get(), raw, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
                        static_cast<int>(image.channels), bit_depth, err)) {
            throw IoError(path, err);
        }
        if (std::fflush(fp.get()) != 0) throw IoError(path, "write failed");
    } else if (ext == "pgm" || ext == "ppm") {
        if ((ext == "pgm") != (image.channels == 1)) {
            throw ShapeError(path + ": ." + ext + " needs " + (ext == "pgm" ? "1" : "3") + " channel(s)");
        }
        const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                                   std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                                   (bit_depth == 16 ? "65535" : "255") + "\n";
        std::vector<unsigned char> bytes(header.begin(), header.end());
        const auto raw = pack_samples(image, bit_depth, true);
        bytes.insert(bytes.end(), raw.begin(), raw.end());
        write_all(path, bytes);
    } else {
        throw IoError(path, "unsupported output extension '" + ext + "' (use .png, .pgm or .ppm)");
    }
}

template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& image) {
    Tensor<T> t(Shape{1, image.channels, image.height, image.width});
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < image.height; ++y)
            for (std::size_t x = 0; x < image.width; ++x) t.at(0, c, y, x) = static_cast<T>(image.at(y, x, c));
    return t;
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& tensor, std::size_t item) {
    const Shape& s = tensor.shape();
    if (item >= s.n) throw ShapeError("tensor_to_image: batch item out of range");
    ImageBuffer img(s.h, s.w, s.c);
    for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t x = 0; x < s.w; ++x) img.at(y, x, c) = static_cast<float>(tensor.at(item, c, y, x));
    return img;
}

ImageBuffer to_rgb(const ImageBuffer& image) {
    if (image.channels == 3) return image;
    ImageBuffer out(image.height, image.width, 3);
    out.path = image.path;
    for (std::size_t i = 0; i < image.height * image.width; ++i)
        for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = image.pixels[i];
    return out;
}

template Tensor<float> image_to_tensor<float>(const ImageBuffer&);
template Tensor<double> image_to_tensor<double>(const ImageBuffer&);
template ImageBuffer tensor_to_image(const Tensor<float>&, std::size_t);
template ImageBuffer tensor_to_image(const Tensor<double>&, std::size_t);

}  // namespace pffnet
