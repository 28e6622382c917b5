#pragma once

#include <span>
#include <vector>

#include "voxelcom/graph.hpp"
#include "voxelcom/scene.hpp"

namespace voxelcom {

struct RaySet {
  int count = 0;
  std::vector<double> origins;  // [count*3]
  std::vector<double> dirs;     // [count*3], unit length
};

// One ray per pixel, row-major. Pinhole camera, looking along camera -z.
RaySet make_rays(const View& v);

// Sampling geometry for a differentiable render. Everything here depends only
// on rays and grid layout, never on grid values, so it enters the graph as
// constants: 8 trilinear corner rows + weights per sample and the per-sample
// segment length (0 for rays that miss the bbox).
struct RayBatch {
  int rays = 0, steps = 0;
  std::vector<int64_t> idx;  // [rays*steps*8] rows into the flattened grid
  std::vector<float> w8;     // [rays*steps*8] trilinear weights
  std::vector<float> delta;  // [rays*steps]
};

RayBatch prepare_batch(const VoxelFeatureGrid& meta, std::span<const double> origins,
                       std::span<const double> dirs, int count, int steps);

// Differentiable volume render: alpha compositing with T_k = exp(-sum sigma*delta),
// sigma = softplus(channel 0), color = clamp01(channels 1..3), mid-gray
// background. Returns [rays,3]. grid_leaf must be the [D,H,W,C] tensor.
Value render_batch(Graph& g, Value grid_leaf, const RayBatch& b);

// Plain (non-autodiff) renderer with identical math, f64 compositing. Used for
// dataset generation and evaluation renders.
Tensor render_image(const VoxelFeatureGrid& grid, const View& v, int steps);

// Mean squared error over all elements of two same-shape values.
Value mse(Graph& g, Value a, Value b);

}  // namespace voxelcom
