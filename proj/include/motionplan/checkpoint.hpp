#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "motionplan/nn.hpp"

namespace motionplan {

// Checkpoint files: magic "MPCKPT01", then per array
//   u32 name length, UTF-8 name, u32 rank, u32 dims..., float32 data,
// little-endian throughout, and a trailing u64 CRC-64 of the payload
// (everything between the magic and the CRC).

struct NamedArray {
    Shape shape;
    std::vector<float> data;
};

using ArrayMap = std::map<std::string, NamedArray>;

uint64_t crc64(const uint8_t* data, size_t len, uint64_t seed = 0);

void save_arrays(const std::string& path, const ArrayMap& arrays);
ArrayMap load_arrays(const std::string& path);

// ParameterStore <-> checkpoint (parameter values only; optimizer state is
// not persisted, training stages always run start-to-finish).
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const ArrayMap& extra = {});
// Loads every array whose name is not in `extra_out` into the store,
// creating entries as needed; arrays prefixed "extra." land in extra_out.
void load_checkpoint(const std::string& path, ParameterStore& store,
                     ArrayMap* extra_out = nullptr);

}  // namespace motionplan
