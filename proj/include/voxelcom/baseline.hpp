#pragma once

#include <cstdint>
#include <vector>

#include "voxelcom/channel.hpp"
#include "voxelcom/tensor.hpp"

namespace voxelcom {

struct VqCodebook {
  Tensor vectors;  // [K, d]
  int64_t K = 0;
  int64_t d = 0;
};

// Lloyd's k-means with k-means++ seeding. Empty clusters re-seed from the
// sample farthest from its centroid. Deterministic in seed.
VqCodebook vq_train(const Tensor& samples, int64_t K, int iters, uint64_t seed);
std::vector<int64_t> vq_apply(const Tensor& samples, const VqCodebook& cb);
Tensor vq_reconstruct(const std::vector<int64_t>& indices, const VqCodebook& cb);
double vq_mse(const Tensor& samples, const VqCodebook& cb);

// Feature grid [D,H,W,C] <-> rows of 2x2x2 spatial blocks [N, 8C].
Tensor blockify(const Tensor& grid);
Tensor unblockify(const Tensor& blocks, const Shape& grid_shape);

// "VQBS", u32 K, u32 d, u32 N, u16 header crc, f32 codebook, packed indices
// (ceil(log2 K) bits each, msb first), little-endian scalars.
std::vector<uint8_t> serialize_digital(const std::vector<int64_t>& indices, const VqCodebook& cb);
struct VqParse {
  VqCodebook cb;
  std::vector<int64_t> indices;
  bool header_ok = false;
};
VqParse deserialize_digital(const std::vector<uint8_t>& bits);

struct SeparationConfig {
  int64_t K = 256;
  int iters = 20;
  uint64_t seed = 0;
  std::vector<McsEntry> mcs_table = default_mcs_table();
};

struct SeparationResult {
  Tensor fhat;        // [D,H,W,C]
  McsEntry mcs;       // selected from the SNR estimate
  int64_t bits = 0;   // source bits before channel coding
  int64_t n_total = 0;  // channel symbols actually sent
  bool header_ok = false;
};

// The digital chain: VQ, serialize, LDPC+QAM at the MCS picked from snr_est,
// AWGN at snr_true, decode, deserialize. Residual bit errors corrupt whatever
// field they land in; a broken header yields a zero grid.
SeparationResult run_separation(const Tensor& grid, const SeparationConfig& cfg,
                                double snr_true_db, double snr_est_db, Rng& rng);

}  // namespace voxelcom
