#pragma once

#include <cstdint>
#include <string>

#include "voxelcom/adam.hpp"

namespace voxelcom {

// Checkpoint file: magic "VCKP", version u16, tensor count u32, then per
// tensor: name (u16 length + bytes), rank u8, extents u32 each, f32 payload.
// All integers and floats little-endian.
void save_checkpoint(const std::string& path, const Params& params);
Params load_checkpoint(const std::string& path);

// FNV-1a 64 over the raw file bytes, hex encoded. Used by manifests to pin
// checkpoint identity for bit-exact replay.
std::string file_hash_hex(const std::string& path);
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull);

}  // namespace voxelcom
