#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "voxelcom/tensor.hpp"

namespace voxelcom {

// Named parameter set. std::map keeps iteration order deterministic.
using Params = std::map<std::string, Tensor>;

struct AdamState {
  int64_t t = 0;
  Params m, v;
};

// Standard Adam update with bias correction. Moments are created lazily the
// first time a parameter name shows up. Parameters without a gradient entry
// are left untouched (their moments do not decay either; absent means the
// step never saw them, not that the gradient was zero).
void adam_step(Params& params, const Params& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace voxelcom
