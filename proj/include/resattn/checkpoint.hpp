#pragma once

// Binary checkpoint:
//   "RATN" | u32 version | u32 count | count x entry
//   entry: u32 name_len | name bytes | u32 ndim | ndim x u64 dims | f64 values (row-major)
// All integers and floats little-endian; entries sorted by name.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resattn/network.hpp"

namespace resattn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;
};

std::vector<std::uint8_t> encode_checkpoint(ModelParams& params);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, ModelParams& params);
// Fills params (already shaped, e.g. by init_model) from the file; names and shapes must match.
void load_checkpoint(const std::filesystem::path& path, ModelParams& params);

}  // namespace resattn
