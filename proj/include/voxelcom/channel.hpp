#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelcom/rng.hpp"
#include "voxelcom/tensor.hpp"

namespace voxelcom {

using cplx = std::complex<double>;

enum class Mod { qpsk, qam16 };
int bits_per_symbol(Mod m);
const char* mod_name(Mod m);
Mod mod_from_name(const std::string& s);

// s_tilde = s + n with complex Gaussian n, per-component variance sigma^2/2,
// sigma^2 = 10^(-snr_db/10) for unit-power s. snr_db = +inf passes s through.
std::vector<cplx> awgn(const std::vector<cplx>& s, double snr_db, Rng& rng);

double measured_snr_db(const std::vector<cplx>& sent, const std::vector<cplx>& received);

// Gray-mapped unit-energy constellations. QPSK: (b0,b1) -> ((1-2b0)+j(1-2b1))/sqrt(2).
// QAM16: (b0,b1) pick I, (b2,b3) pick Q from the Gray PAM4 ladder
// 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, scaled by 1/sqrt(10).
std::vector<cplx> qam_map(const std::vector<uint8_t>& bits, Mod m);
// Exact log-sum-exp LLRs, positive favors bit 0. noise_var is E|n|^2 per symbol.
std::vector<double> qam_soft_demap(const std::vector<cplx>& y, Mod m, double noise_var);

struct LdpcCode {
  int k = 0, n = 0;
  std::vector<std::vector<int32_t>> check_cols;  // per check node, variable indices
  std::vector<std::vector<int32_t>> var_checks;  // per variable, check indices
  std::vector<int32_t> info_cols, parity_cols;   // positions in the codeword
  std::vector<uint64_t> parity_gen;              // (n-k) rows x ceil(k/64) words: p = M u
  double rate() const { return static_cast<double>(k) / n; }
};

// Progressive edge growth, variable degree 3, near-regular check degrees.
// Deterministic in seed (ties broken by the seeded rng; seed is advanced until
// the parity structure is full rank).
LdpcCode make_ldpc(int k, int n, uint64_t seed);

std::vector<uint8_t> ldpc_encode(const std::vector<uint8_t>& info, const LdpcCode& code);

struct LdpcDecodeResult {
  std::vector<uint8_t> info;
  bool converged = false;
  int iters = 0;
};
// Sum-product belief propagation, early exit on zero syndrome.
LdpcDecodeResult ldpc_decode(const std::vector<double>& llrs, const LdpcCode& code,
                             int max_iters = 50);

struct McsEntry {
  double min_snr_db = 0;
  Mod mod = Mod::qpsk;
  int rate_num = 1, rate_den = 2;
  double rate() const { return static_cast<double>(rate_num) / rate_den; }
  std::string str() const;
};
using McsTable = std::vector<McsEntry>;

// Thresholds come from measured BER waterfalls. The three lower entries sit
// at least 0.5 dB above their measured 1e-5 crossing; the top entry is pinned
// at the 10 dB design point used by the mismatch experiments, where this short
// code still shows a few 1e-4 of residual BER (its own 1e-5 crossing is near
// 10.5 dB; longer codes would close that gap).
McsTable default_mcs_table();
const McsEntry& select_mcs(const McsTable& table, double snr_est_db);

// LDPC code backing an MCS rate: 1/2 -> (512,1024), 2/3 -> (512,768),
// 3/4 -> (512,684). Construction is cached per rate.
const LdpcCode& code_for_rate(int rate_num, int rate_den);

// Sends bits through encode -> map -> AWGN -> demap -> decode, chunking into
// codewords (zero padding the tail). Returns the decoded bits, truncated back.
// The demapper trusts snr_assumed_db; the channel applies snr_true_db.
std::vector<uint8_t> send_bits_digital(const std::vector<uint8_t>& bits, const McsEntry& mcs,
                                       double snr_true_db, double snr_assumed_db, Rng& rng);
// Channel symbols send_bits_digital would emit for this many info bits.
int64_t digital_symbol_count(int64_t bits, const McsEntry& mcs);

struct BerPoint {
  double snr_db = 0;
  Mod mod = Mod::qpsk;
  int rate_num = 1, rate_den = 2;
  int64_t bits = 0, errors = 0;
  double ber() const { return bits ? static_cast<double>(errors) / static_cast<double>(bits) : 0.0; }
};
// Monte Carlo post-decoding BER at one operating point over >= min_bits info bits.
BerPoint measure_ber(const McsEntry& mcs, double snr_db, int64_t min_bits, uint64_t seed);
void write_ber_csv(const std::string& path, const std::vector<BerPoint>& points);

uint16_t crc16_ccitt(const uint8_t* data, size_t len);

}  // namespace voxelcom
