#pragma once

#include <string>

#include "voxelcom/tensor.hpp"

namespace voxelcom {

// Binary PPM (P6), 8-bit. Values clamped to [0,1] and rounded on write.
void save_ppm(const std::string& path, const Tensor& image);  // [H,W,3]
Tensor load_ppm(const std::string& path);

}  // namespace voxelcom
