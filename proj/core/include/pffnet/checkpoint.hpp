#pragma once

// Binary checkpoint file, all integers little-endian:
//
//   "PFFN"                      magic
//   u32                         format version
//   u64 + bytes                 config block, UTF-8 "key=value" lines
//   u64                         tensor count
//   per tensor:
//     u64 + bytes               name
//     u32                       rank (4)
//     u64 x rank                dims
//     f32 x numel               data
//
// Parameters use their ParamStore keys; Adam moments follow as "adam.m.<key>" and
// "adam.v.<key>". The config block holds the model and training configuration, the Adam
// step, the epoch/iteration counters, the seed and the data stream position. Batch order is
// a pure function of (seed, position), so those two fully describe the RNG state.

#include <cstdint>
#include <string>

#include "pffnet/trainer.hpp"

namespace pffnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    TrainState state;
    bool has_optimizer = true;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

// Throws FormatError on a bad magic, unsupported version, truncation, or tensors that do not
// match the declared config (naming the key); IoError if the file cannot be opened.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pffnet
