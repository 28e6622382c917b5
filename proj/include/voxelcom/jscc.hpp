#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxelcom/channel.hpp"
#include "voxelcom/codec.hpp"

namespace voxelcom {

inline constexpr int kKMax = 32;  // complex symbols per patch at full width

struct JsccConfig {
  double eta = 1.0;
  std::vector<int> q_levels = {0, 2, 4, 8, 16, 32};
  McsEntry side_mcs{3.0, Mod::qpsk, 1, 2};  // most robust entry carries side info
};

struct BandwidthAllocation {
  std::vector<int> k_bar;  // complex symbols per patch
  double eta = 0;
  std::vector<int> q_levels;
  int64_t n_payload() const {
    int64_t n = 0;
    for (int k : k_bar) n += k;
    return n;
  }
};

// k_bar_i = the q_level nearest to eta * per_patch_bits_i, ties upward.
BandwidthAllocation allocate(const RateReport& rates, double eta,
                             const std::vector<int>& q_levels);

struct ChannelFrame {
  BandwidthAllocation alloc;
  std::vector<uint8_t> side_bits;  // one bit per element
  std::vector<float> payload_iq;   // 2 floats per payload symbol, patch order
  int64_t n_payload = 0;
  int64_t n_total = 0;  // payload + side-info symbol equivalent
};

double compute_cbr(int64_t n_total, int64_t m);
int64_t side_symbol_count(const McsEntry& mcs, int64_t bits);

// Parameters of the variable-rate heads: fe/d1 fe/d2 fe/out, fd/d1 fd/d2
// fd/out (trunk width 64, full head width 2*kKMax reals).
void init_jscc_params(Params& p, const CodecShape& s, uint64_t seed);

// Graph builders (training and inference share them).
Value fe_forward(Graph& g, Binder& bind, Value residual);  // [P,dv] -> [P,64]
Value fd_forward(Graph& g, Binder& bind, Value padded);    // [P,64] -> [P,dv]
// [P, 2*kKMax] 0/1 mask keeping the first 2*k_bar_i reals of each row.
Tensor alloc_real_mask(const BandwidthAllocation& a);
Tensor alloc_patch_mask(const BandwidthAllocation& a);  // [P,1], 1 where k_bar>0
// Scales masked symbols to unit average power per complex symbol.
Value power_normalize(Graph& g, Value masked, int64_t n_complex);

// Side info: quantized z (8 bits per element over [-8,8]) + eta (f32) + CRC-16.
std::vector<uint8_t> make_side_bits(const Tensor& z, float eta);
struct SideInfo {
  Tensor z;  // dequantized, shape [zd,zh,zw,zc]
  float eta = 0;
  bool crc_ok = false;
};
SideInfo parse_side_bits(const std::vector<uint8_t>& bits, const CodecShape& s);
// The z everyone agrees on: quantize then dequantize.
Tensor quantize_z(const Tensor& z);

ChannelFrame jscc_encode(const Params& params, const Tensor& grid, const CodecShape& s,
                         const JsccConfig& cfg);
// Applies AWGN to the payload and the digital side channel. The side info is
// demapped with the receiver's SNR estimate.
ChannelFrame apply_channel(const ChannelFrame& tx, const JsccConfig& cfg, double snr_true_db,
                           double snr_est_db, Rng& rng);
// Reconstructs latent patches [P,dv]. Throws an io error when the side-info
// CRC fails (the decoder refuses to guess the allocation).
Tensor jscc_decode(const Params& params, const ChannelFrame& rx, const CodecShape& s,
                   const JsccConfig& cfg);

// Wire format: "NFRM", u32 P, per-patch u8 level index, u16 side-info bit
// length, packed side bits, f32 I/Q pairs, little-endian throughout.
std::vector<uint8_t> serialize_frame(const ChannelFrame& f, const JsccConfig& cfg);
ChannelFrame deserialize_frame(const std::vector<uint8_t>& bytes, const JsccConfig& cfg);

}  // namespace voxelcom
