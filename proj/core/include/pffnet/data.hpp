#pragma once

// Training data: sliding-window crops, the 12 rotation x flip variants, patch manifests,
// and deterministic shuffled batching.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "pffnet/image_io.hpp"
#include "pffnet/tensor.hpp"

namespace pffnet {

inline constexpr std::size_t kDefaultCropSize = 520;
inline constexpr std::size_t kDefaultCropStride = 260;

struct CropOrigin {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const CropOrigin&, const CropOrigin&) = default;
};

// Origins (r * stride, c * stride) of every size x size window fully inside the image.
// Throws ShapeError if the image is smaller than the window on either axis.
std::vector<CropOrigin> crop_origins(std::size_t height, std::size_t width, std::size_t size, std::size_t stride);

ImageBuffer crop_image(const ImageBuffer& image, CropOrigin origin, std::size_t size);

struct Crop {
    CropOrigin origin;
    ImageBuffer image;
};

std::vector<Crop> extract_crops(const ImageBuffer& image, std::size_t size = kDefaultCropSize,
                                std::size_t stride = kDefaultCropStride);

enum class Rotation { R0 = 0, R90 = 90, R180 = 180, R270 = 270 };
enum class Flip { None, Horizontal, Vertical };

// Counter-clockwise rotation followed by a mirror flip.
struct AugmentVariant {
    Rotation rotation = Rotation::R0;
    Flip flip = Flip::None;

    friend bool operator==(const AugmentVariant&, const AugmentVariant&) = default;
};

// 4 rotations x 3 flips, identity first. Note that the dihedral group of the square has only
// 8 elements, so as pixel maps these 12 collapse to 8: flip_h . rot(a + 180) == flip_v . rot(a).
const std::array<AugmentVariant, 12>& all_variants();

int rotation_degrees(Rotation r);
Rotation rotation_from_degrees(int degrees);
const char* flip_name(Flip f);
Flip flip_from_name(const std::string& name);

// Rotations require a square image (ShapeError otherwise).
ImageBuffer apply_variant(const ImageBuffer& image, AugmentVariant variant);
ImageBuffer invert_variant(const ImageBuffer& image, AugmentVariant variant);

// The 12 variants of one square crop, in all_variants() order.
std::vector<ImageBuffer> augment(const ImageBuffer& crop);

struct SceneSource {
    std::string id;
    std::string hazy_path;
    std::string clear_path;
};

// One training sample: which window of which scene, and which variant of it.
struct PatchRecord {
    std::string scene;
    std::string hazy_path;
    std::string clear_path;
    CropOrigin origin;
    AugmentVariant variant;

    friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

struct PatchSet {
    std::size_t crop_size = kDefaultCropSize;
    std::size_t stride = kDefaultCropStride;
    bool augmented = true;
    std::vector<PatchRecord> records;

    std::size_t size() const { return records.size(); }
};

// Reads every scene's image headers, checks hazy/clear dims agree (ShapeError naming the
// scene otherwise) and enumerates crops x variants. Pixels are not kept.
PatchSet build_patchset(const std::vector<SceneSource>& scenes, std::size_t crop_size = kDefaultCropSize,
                        std::size_t stride = kDefaultCropStride, bool augment = true);

// Tab-separated: scene, hazy path, clear path, origin row, origin col, rotation, flip.
// Crop size, stride and augmentation are recorded in '#' header lines.
void write_manifest(const PatchSet& set, const std::string& path);
PatchSet read_manifest(const std::string& path);

struct PatchPair {
    ImageBuffer hazy;
    ImageBuffer clear;
    std::string scene;
    AugmentVariant variant;
};

class PairDataset {
public:
    virtual ~PairDataset() = default;
    virtual std::size_t size() const = 0;
    virtual PatchPair get(std::size_t index) const = 0;
};

class InMemoryPairs final : public PairDataset {
public:
    InMemoryPairs() = default;
    explicit InMemoryPairs(std::vector<PatchPair> pairs);

    void add(PatchPair pair);
    std::size_t size() const override { return pairs_.size(); }
    PatchPair get(std::size_t index) const override;

private:
    std::vector<PatchPair> pairs_;
};

// Materializes manifest records on demand; decoded source images are cached.
class ManifestDataset final : public PairDataset {
public:
    explicit ManifestDataset(PatchSet set);

    std::size_t size() const override { return set_.size(); }
    PatchPair get(std::size_t index) const override;
    const PatchSet& patchset() const { return set_; }

private:
    std::shared_ptr<const ImageBuffer> image(const std::string& path) const;

    PatchSet set_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::shared_ptr<const ImageBuffer>> cache_;
};

// Subset of another dataset by index list.
class SubsetDataset final : public PairDataset {
public:
    SubsetDataset(const PairDataset& base, std::vector<std::size_t> indices);

    std::size_t size() const override { return indices_.size(); }
    PatchPair get(std::size_t index) const override { return base_->get(indices_.at(index)); }

private:
    const PairDataset* base_;
    std::vector<std::size_t> indices_;
};

// Shuffled order of [0, count) for one pass over the data; a pure function of (seed, pass).
std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed, std::uint64_t pass);

// floor(count / batch_size) index batches of one pass; the tail is dropped.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t pass);

struct Batch {
    Tensor32 hazy;
    Tensor32 clear;
    std::vector<std::size_t> indices;
};

// Stacks dataset items into (n, c, h, w) tensors. All items must share dims.
Batch assemble_batch(const PairDataset& data, const std::vector<std::size_t>& indices);

// Endless stream of batches, pass after pass. The position is two integers, so a stream
// can be resumed exactly from a checkpoint.
class BatchStream {
public:
    struct Position {
        std::uint64_t pass = 0;
        std::uint64_t batch = 0;
        friend bool operator==(const Position&, const Position&) = default;
    };

    BatchStream(const PairDataset& data, std::size_t batch_size, std::uint64_t seed);

    Batch next();
    Position position() const { return pos_; }
    void seek(Position pos);
    std::size_t batches_per_pass() const { return batches_per_pass_; }

private:
    const PairDataset* data_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t batches_per_pass_;
    Position pos_;
    std::uint64_t cached_pass_ = ~std::uint64_t{0};
    std::vector<std::vector<std::size_t>> cached_;
};

}  // namespace pffnet
