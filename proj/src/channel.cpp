#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "voxelcom/channel.hpp"

namespace voxelcom {

int bits_per_symbol(Mod m) { return m == Mod::qpsk ? 2 : 4; }

const char* mod_name(Mod m) { return m == Mod::qpsk ? "qpsk" : "qam16"; }

Mod mod_from_name(const std::string& s) {
  if (s == "qpsk") return Mod::qpsk;
  if (s == "qam16") return Mod::qam16;
  fail(ErrorKind::config, "unknown modulation: " + s);
}

std::vector<cplx> awgn(const std::vector<cplx>& s, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return s;
  const double sigma2 = std::pow(10.0, -snr_db / 10.0);
  const double sc = std::sqrt(sigma2 / 2.0);
  std::vector<cplx> out(s.size());
  for (size_t i = 0; i < s.size(); ++i)
    out[i] = s[i] + cplx(sc * rng.normal(), sc * rng.normal());
  return out;
}

double measured_snr_db(const std::vector<cplx>& sent, const std::vector<cplx>& received) {
  if (sent.size() != received.size()) fail(ErrorKind::shape, "measured_snr_db: size mismatch");
  double sig = 0, err = 0;
  for (size_t i = 0; i < sent.size(); ++i) {
    sig += std::norm(sent[i]);
    err += std::norm(received[i] - sent[i]);
  }
  if (err <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

namespace {

// Per-axis Gray PAM ladders; index is the axis bit pattern (msb first).
const double kQpskAxis[2] = {1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0)};  // 0 -> +, 1 -> -
const double kQamAxis[4] = {-3.0 / std::sqrt(10.0), -1.0 / std::sqrt(10.0),
                            3.0 / std::sqrt(10.0), 1.0 / std::sqrt(10.0)};  // 00,01,10,11

// LLRs for one axis with 2^b levels labeled by their index bits.
void axis_llrs(double y, double sigma2_comp, const double* levels, int b, double* out) {
  const int count = 1 << b;
  double metric[4];
  for (int j = 0; j < count; ++j) metric[j] = -(y - levels[j]) * (y - levels[j]) / (2.0 * sigma2_comp);
  for (int bit = 0; bit < b; ++bit) {
    double m0 = -std::numeric_limits<double>::infinity();
    double m1 = m0;
    for (int j = 0; j < count; ++j) {
      if ((j >> (b - 1 - bit)) & 1)
        m1 = std::max(m1, metric[j]);
      else
        m0 = std::max(m0, metric[j]);
    }
    double s0 = 0, s1 = 0;
    for (int j = 0; j < count; ++j) {
      if ((j >> (b - 1 - bit)) & 1)
        s1 += std::exp(metric[j] - m1);
      else
        s0 += std::exp(metric[j] - m0);
    }
    out[bit] = (m0 + std::log(s0)) - (m1 + std::log(s1));
  }
}

}  // namespace

std::vector<cplx> qam_map(const std::vector<uint8_t>& bits, Mod m) {
  const int bps = bits_per_symbol(m);
  if (bits.size() % bps) fail(ErrorKind::shape, "qam_map: bit count not a multiple of bits/symbol");
  const int half = bps / 2;
  std::vector<cplx> out(bits.size() / bps);
  for (size_t i = 0; i < out.size(); ++i) {
    const uint8_t* b = bits.data() + i * bps;
    int idx_i = 0, idx_q = 0;
    for (int j = 0; j < half; ++j) {
      idx_i = (idx_i << 1) | (b[j] & 1);
      idx_q = (idx_q << 1) | (b[half + j] & 1);
    }
    if (m == Mod::qpsk)
      out[i] = cplx(kQpskAxis[idx_i], kQpskAxis[idx_q]);
    else
      out[i] = cplx(kQamAxis[idx_i], kQamAxis[idx_q]);
  }
  return out;
}

std::vector<double> qam_soft_demap(const std::vector<cplx>& y, Mod m, double noise_var) {
  if (noise_var <= 0) fail(ErrorKind::config, "qam_soft_demap: noise_var must be positive");
  const int bps = bits_per_symbol(m);
  const int half = bps / 2;
  const double* axis = m == Mod::qpsk ? kQpskAxis : kQamAxis;
  const double s2 = noise_var / 2.0;
  std::vector<double> llrs(y.size() * bps);
  double tmp[2];
  for (size_t i = 0; i < y.size(); ++i) {
    axis_llrs(y[i].real(), s2, axis, half, tmp);
    for (int j = 0; j < half; ++j) llrs[i * bps + j] = tmp[j];
    axis_llrs(y[i].imag(), s2, axis, half, tmp);
    for (int j = 0; j < half; ++j) llrs[i * bps + half + j] = tmp[j];
  }
  return llrs;
}

std::string McsEntry::str() const {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s-%d/%d", mod_name(mod), rate_num, rate_den);
  return buf;
}

McsTable default_mcs_table() {
  return {
      {3.0, Mod::qpsk, 1, 2},
      {6.0, Mod::qpsk, 3, 4},
      {8.5, Mod::qam16, 1, 2},
      {10.0, Mod::qam16, 2, 3},
  };
}

const McsEntry& select_mcs(const McsTable& table, double snr_est_db) {
  if (table.empty()) fail(ErrorKind::config, "select_mcs: empty table");
  const McsEntry* lowest = &table.front();
  for (const auto& e : table)
    if (e.min_snr_db < lowest->min_snr_db) lowest = &e;
  const McsEntry* best = nullptr;
  for (const auto& e : table)
    if (e.min_snr_db <= snr_est_db && (!best || e.min_snr_db > best->min_snr_db)) best = &e;
  return best ? *best : *lowest;
}

const LdpcCode& code_for_rate(int rate_num, int rate_den) {
  static std::map<std::pair<int, int>, LdpcCode> cache;
  auto key = std::make_pair(rate_num, rate_den);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  int n;
  if (rate_num == 1 && rate_den == 2)
    n = 1024;
  else if (rate_num == 2 && rate_den == 3)
    n = 768;
  else if (rate_num == 3 && rate_den == 4)
    n = 684;
  else
    fail(ErrorKind::config, "unsupported code rate");
  return cache.emplace(key, make_ldpc(512, n, 11)).first->second;
}

int64_t digital_symbol_count(int64_t bits, const McsEntry& mcs) {
  const LdpcCode& code = code_for_rate(mcs.rate_num, mcs.rate_den);
  const int64_t bps = bits_per_symbol(mcs.mod);
  const int64_t blocks = (bits + code.k - 1) / code.k;
  return (blocks * code.n + bps - 1) / bps;
}

std::vector<uint8_t> send_bits_digital(const std::vector<uint8_t>& bits, const McsEntry& mcs,
                                       double snr_true_db, double snr_assumed_db, Rng& rng) {
  const LdpcCode& code = code_for_rate(mcs.rate_num, mcs.rate_den);
  const int bps = bits_per_symbol(mcs.mod);
  const size_t blocks = (bits.size() + code.k - 1) / code.k;
  if (blocks == 0) return {};

  std::vector<uint8_t> coded;
  coded.reserve(blocks * code.n);
  std::vector<uint8_t> info(code.k);
  for (size_t b = 0; b < blocks; ++b) {
    std::fill(info.begin(), info.end(), 0);
    const size_t off = b * code.k;
    const size_t take = std::min(bits.size() - off, static_cast<size_t>(code.k));
    std::copy(bits.begin() + off, bits.begin() + off + take, info.begin());
    auto cw = ldpc_encode(info, code);
    coded.insert(coded.end(), cw.begin(), cw.end());
  }
  const size_t pad = (bps - coded.size() % bps) % bps;
  coded.insert(coded.end(), pad, 0);

  auto symbols = qam_map(coded, mcs.mod);
  auto received = awgn(symbols, snr_true_db, rng);
  const double assumed_var =
      std::isinf(snr_assumed_db) ? 1e-12 : std::pow(10.0, -snr_assumed_db / 10.0);
  auto llrs = qam_soft_demap(received, mcs.mod, std::max(assumed_var, 1e-12));

  std::vector<uint8_t> out;
  out.reserve(blocks * code.k);
  std::vector<double> block_llr(code.n);
  for (size_t b = 0; b < blocks; ++b) {
    std::copy(llrs.begin() + b * code.n, llrs.begin() + (b + 1) * code.n, block_llr.begin());
    auto dec = ldpc_decode(block_llr, code);
    out.insert(out.end(), dec.info.begin(), dec.info.end());
  }
  out.resize(bits.size());
  return out;
}

BerPoint measure_ber(const McsEntry& mcs, double snr_db, int64_t min_bits, uint64_t seed) {
  const LdpcCode& code = code_for_rate(mcs.rate_num, mcs.rate_den);
  Rng data(Rng::derive(seed, "ber/data"));
  Rng noise(Rng::derive(seed, "ber/noise"));
  BerPoint pt;
  pt.snr_db = snr_db;
  pt.mod = mcs.mod;
  pt.rate_num = mcs.rate_num;
  pt.rate_den = mcs.rate_den;
  std::vector<uint8_t> info(code.k);
  while (pt.bits < min_bits) {
    for (auto& b : info) b = static_cast<uint8_t>(data.uniform_int(2));
    auto got = send_bits_digital(info, mcs, snr_db, snr_db, noise);
    for (int j = 0; j < code.k; ++j) pt.errors += got[j] != info[j];
    pt.bits += code.k;
  }
  return pt;
}

void write_ber_csv(const std::string& path, const std::vector<BerPoint>& points) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open " + path);
  f << "snr_db,modulation,rate,bits,errors,ber\n";
  char buf[160];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.2f,%s,%d/%d,%lld,%lld,%.6g\n", p.snr_db, mod_name(p.mod),
                  p.rate_num, p.rate_den, static_cast<long long>(p.bits),
                  static_cast<long long>(p.errors), p.ber());
    f << buf;
  }
}

uint16_t crc16_ccitt(const uint8_t* data, size_t len) {
  uint16_t crc = 0xFFFF;
  for (size_t i = 0; i < len; ++i) {
    crc ^= static_cast<uint16_t>(data[i]) << 8;
    for (int b = 0; b < 8; ++b)
      crc = (crc & 0x8000) ? static_cast<uint16_t>((crc << 1) ^ 0x1021) : static_cast<uint16_t>(crc << 1);
  }
  return crc;
}

}  // namespace voxelcom
