#include "pffnet/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "pffnet/keyvalue.hpp"

namespace pffnet {
namespace {

// Square image rotated 90 degrees counter-clockwise: out(y, x) = in(x, n - 1 - y).
ImageBuffer rotate90(const ImageBuffer& in) {
    const std::size_t n = in.height;
    ImageBuffer out(n, n, in.channels);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t c = 0; c < in.channels; ++c) out.at(y, x, c) = in.at(x, n - 1 - y, c);
    return out;
}

ImageBuffer rotate(const ImageBuffer& in, int quarter_turns) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0) return in;
    if (in.height != in.width) throw ShapeError("rotation needs a square image, got " + std::to_string(in.height) +
                                                "x" + std::to_string(in.width));
    ImageBuffer out = in;
    for (int i = 0; i < quarter_turns; ++i) out = rotate90(out);
    return out;
}

ImageBuffer flip(const ImageBuffer& in, Flip f) {
    if (f == Flip::None) return in;
    ImageBuffer out(in.height, in.width, in.channels);
    for (std::size_t y = 0; y < in.height; ++y)
        for (std::size_t x = 0; x < in.width; ++x)
            for (std::size_t c = 0; c < in.channels; ++c) {
                const std::size_t sy = f == Flip::Vertical ? in.height - 1 - y : y;
                const std::size_t sx = f == Flip::Horizontal ? in.width - 1 - x : x;
                out.at(y, x, c) = in.at(sy, sx, c);
            }
    return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Reads only the dims of an image file.
std::array<std::size_t, 3> image_dims(const std::string& path) {
    const ImageBuffer img = load_image(path);
    return {img.height, img.width, img.channels};
}

}  // namespace

std::vector<CropOrigin> crop_origins(std::size_t height, std::size_t width, std::size_t size, std::size_t stride) {
    if (size == 0 || stride == 0) throw ConfigError("crop size and stride must be positive");
    if (height < size || width < size) {
        throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than crop " +
                         std::to_string(size));
    }
    const std::size_t rows = (height - size) / stride + 1;
    const std::size_t cols = (width - size) / stride + 1;
    std::vector<CropOrigin> out;
    out.reserve(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.push_back({r * stride, c * stride});
    return out;
}

ImageBuffer crop_image(const ImageBuffer& image, CropOrigin origin, std::size_t size) {
    if (origin.row + size > image.height || origin.col + size > image.width) {
        throw ShapeError("crop at (" + std::to_string(origin.row) + ", " + std::to_string(origin.col) +
                         ") exceeds image bounds");
    }
    ImageBuffer out(size, size, image.channels);
    for (std::size_t y = 0; y < size; ++y) {
        const float* src = &image.pixels[((origin.row + y) * image.width + origin.col) * image.channels];
        std::copy(src, src + size * image.channels, &out.pixels[y * size * image.channels]);
    }
    out.path = image.path;
    return out;
}

std::vector<Crop> extract_crops(const ImageBuffer& image, std::size_t size, std::size_t stride) {
    std::vector<Crop> out;
    for (const CropOrigin& o : crop_origins(image.height, image.width, size, stride)) {
        out.push_back({o, crop_image(image, o, size)});
    }
    return out;
}

const std::array<AugmentVariant, 12>& all_variants() {
    static const std::array<AugmentVariant, 12> variants = [] {
        std::array<AugmentVariant, 12> v{};
        std::size_t i = 0;
        for (Rotation r : {Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270})
            for (Flip f : {Flip::None, Flip::Horizontal, Flip::Vertical}) v[i++] = {r, f};
        return v;
    }();
    return variants;
}

int rotation_degrees(Rotation r) { return static_cast<int>(r); }

Rotation rotation_from_degrees(int degrees) {
    switch (degrees) {
        case 0: return Rotation::R0;
        case 90: return Rotation::R90;
        case 180: return Rotation::R180;
        case 270: return Rotation::R270;
        default: throw ConfigError("rotation must be 0, 90, 180 or 270, got " + std::to_string(degrees));
    }
}

const char* flip_name(Flip f) {
    switch (f) {
        case Flip::Horizontal: return "horizontal";
        case Flip::Vertical: return "vertical";
        default: return "none";
    }
}

Flip flip_from_name(const std::string& name) {
    if (name == "none") return Flip::None;
    if (name == "horizontal") return Flip::Horizontal;
    if (name == "vertical") return Flip::Vertical;
    throw ConfigError("unknown flip '" + name + "'");
}

ImageBuffer apply_variant(const ImageBuffer& image, AugmentVariant v) {
    ImageBuffer out = flip(rotate(image, rotation_degrees(v.rotation) / 90), v.flip);
    out.path = image.path;
    return out;
}

ImageBuffer invert_variant(const ImageBuffer& image, AugmentVariant v) {
    ImageBuffer out = rotate(flip(image, v.flip), -rotation_degrees(v.rotation) / 90);
    out.path = image.path;
    return out;
}

std::vector<ImageBuffer> augment(const ImageBuffer& crop) {
    if (crop.height != crop.width) throw ShapeError("augment needs a square crop");
    std::vector<ImageBuffer> out;
    out.reserve(12);
    for (const auto& v : all_variants()) out.push_back(apply_variant(crop, v));
    return out;
}

PatchSet build_patchset(const std::vector<SceneSource>& scenes, std::size_t crop_size, std::size_t stride,
                        bool do_augment) {
    PatchSet set;
    set.crop_size = crop_size;
    set.stride = stride;
    set.augmented = do_augment;
    for (const auto& scene : scenes) {
        const auto hazy = image_dims(scene.hazy_path);
        const auto clear = image_dims(scene.clear_path);
        if (hazy != clear) {
            throw ShapeError("scene '" + scene.id + "': hazy image is " + std::to_string(hazy[0]) + "x" +
                             std::to_string(hazy[1]) + "x" + std::to_string(hazy[2]) + " but clear image is " +
                             std::to_string(clear[0]) + "x" + std::to_string(clear[1]) + "x" +
                             std::to_string(clear[2]));
        }
        for (const CropOrigin& o : crop_origins(hazy[0], hazy[1], crop_size, stride)) {
            if (do_augment) {
                for (const auto& v : all_variants()) set.records.push_back({scene.id, scene.hazy_path, scene.clear_path, o, v});
            } else {
                set.records.push_back({scene.id, scene.hazy_path, scene.clear_path, o, AugmentVariant{}});
            }
        }
    }
    return set;
}

void write_manifest(const PatchSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot open for writing");
    out << "# pffnet patch manifest v1\n";
    out << "# crop=" << set.crop_size << " stride=" << set.stride << " augment=" << (set.augmented ? 1 : 0) << "\n";
    out << "# scene\thazy\tclear\trow\tcol\trotation\tflip\n";
    for (const auto& r : set.records) {
        out << r.scene << '\t' << r.hazy_path << '\t' << r.clear_path << '\t' << r.origin.row << '\t' << r.origin.col
            << '\t' << rotation_degrees(r.variant.rotation) << '\t' << flip_name(r.variant.flip) << '\n';
    }
    if (!out) throw IoError(path, "write failed");
}

PatchSet read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    PatchSet set;
    bool have_header = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string token;
            while (hs >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
                if (key == "crop") {
                    set.crop_size = parse_size(value, key);
                    have_header = true;
                }
                if (key == "stride") set.stride = parse_size(value, key);
                if (key == "augment") set.augmented = value == "1";
            }
            continue;
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 7) {
            throw FormatError(path, "line " + std::to_string(line_no) + ": expected 7 tab-separated fields, got " +
                                        std::to_string(fields.size()));
        }
        try {
            set.records.push_back({fields[0], fields[1], fields[2],
                                   {parse_size(fields[3], "row"), parse_size(fields[4], "col")},
                                   {rotation_from_degrees(static_cast<int>(parse_size(fields[5], "rotation"))),
                                    flip_from_name(fields[6])}});
        } catch (const ConfigError& e) {
            throw FormatError(path, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_header) throw FormatError(path, "missing '# crop=' header line");
    return set;
}

InMemoryPairs::InMemoryPairs(std::vector<PatchPair> pairs) {
    for (auto& p : pairs) add(std::move(p));
}

void InMemoryPairs::add(PatchPair pair) {
    if (!pair.hazy.same_dims(pair.clear)) throw ShapeError("patch pair hazy/clear dims differ");
    pairs_.push_back(std::move(pair));
}

PatchPair InMemoryPairs::get(std::size_t index) const { return pairs_.at(index); }

ManifestDataset::ManifestDataset(PatchSet set) : set_(std::move(set)) {}

std::shared_ptr<const ImageBuffer> ManifestDataset::image(const std::string& path) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    auto img = std::make_shared<const ImageBuffer>(load_image(path));
    cache_.emplace(path, img);
    return img;
}

PatchPair ManifestDataset::get(std::size_t index) const {
    const PatchRecord& r = set_.records.at(index);
    const auto hazy = image(r.hazy_path);
    const auto clear = image(r.clear_path);
    if (!hazy->same_dims(*clear)) throw ShapeError("scene '" + r.scene + "': hazy and clear dims differ");
    PatchPair p;
    p.hazy = apply_variant(crop_image(*hazy, r.origin, set_.crop_size), r.variant);
    p.clear = apply_variant(crop_image(*clear, r.origin, set_.crop_size), r.variant);
    p.scene = r.scene;
    p.variant = r.variant;
    return p;
}

SubsetDataset::SubsetDataset(const PairDataset& base, std::vector<std::size_t> indices)
    : base_(&base), indices_(std::move(indices)) {
    for (std::size_t i : indices_) {
        if (i >= base.size()) throw ConfigError("subset index out of range");
    }
}

std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed, std::uint64_t pass) {
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    std::mt19937_64 rng(splitmix64(seed) ^ splitmix64(pass + 0x51ed2701u));
    // Fisher-Yates with a fixed draw rule so the order does not depend on the standard library.
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t pass) {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    const auto perm = epoch_permutation(count, seed, pass);
    std::vector<std::vector<std::size_t>> batches(count / batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        batches[b].assign(perm.begin() + static_cast<long>(b * batch_size),
                          perm.begin() + static_cast<long>((b + 1) * batch_size));
    }
    return batches;
}

Batch assemble_batch(const PairDataset& data, const std::vector<std::size_t>& indices) {
    Batch batch;
    batch.indices = indices;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const PatchPair p = data.get(indices[i]);
        if (i == 0) {
            const Shape s{indices.size(), p.hazy.channels, p.hazy.height, p.hazy.width};
            batch.hazy = Tensor32(s);
            batch.clear = Tensor32(s);
        }
        const Shape& s = batch.hazy.shape();
        if (p.hazy.channels != s.c || p.hazy.height != s.h || p.hazy.width != s.w || !p.hazy.same_dims(p.clear)) {
            throw ShapeError("batch items have different dims (item " + std::to_string(indices[i]) + ")");
        }
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x) {
                    batch.hazy.at(i, c, y, x) = p.hazy.at(y, x, c);
                    batch.clear.at(i, c, y, x) = p.clear.at(y, x, c);
                }
    }
    return batch;
}

BatchStream::BatchStream(const PairDataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed), batches_per_pass_(0) {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    batches_per_pass_ = data.size() / batch_size;
    if (batches_per_pass_ == 0) {
        throw ConfigError("dataset has " + std::to_string(data.size()) + " patches, fewer than one batch of " +
                          std::to_string(batch_size));
    }
}

Batch BatchStream::next() {
    if (pos_.batch >= batches_per_pass_) {
        ++pos_.pass;
        pos_.batch = 0;
    }
    if (cached_pass_ != pos_.pass) {
        cached_ = make_batches(data_->size(), batch_size_, seed_, pos_.pass);
        cached_pass_ = pos_.pass;
    }
    Batch b = assemble_batch(*data_, cached_[pos_.batch]);
    ++pos_.batch;
    return b;
}

void BatchStream::seek(Position pos) {
    if (pos.batch > batches_per_pass_) throw ConfigError("batch position beyond end of pass");
    pos_ = pos;
}

}  // namespace pffnet
