#include <algorithm>
#include <cmath>
#include <cstring>

#include "voxelcom/jscc.hpp"

namespace voxelcom {
namespace {

constexpr float kSlope = 0.01f;
constexpr int kHeadWidth = 2 * kKMax;  // reals per full-width patch projection
constexpr double kZLo = -8.0, kZHi = 8.0;

std::vector<int> level_candidates(const std::vector<int>& q_levels) {
  std::vector<int> c = q_levels;
  c.push_back(0);
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  if (c.front() < 0) fail(ErrorKind::config, "allocate: bandwidth levels must be non-negative");
  if (c.back() > kKMax) fail(ErrorKind::config, "allocate: bandwidth levels exceed the head width");
  return c;
}

uint8_t quantize_z_scalar(float z) {
  const double c = std::clamp(static_cast<double>(z), kZLo, kZHi);
  return static_cast<uint8_t>(std::lround((c - kZLo) / (kZHi - kZLo) * 255.0));
}

float dequantize_z_scalar(uint8_t q) {
  return static_cast<float>(kZLo + q * ((kZHi - kZLo) / 255.0));
}

std::vector<uint8_t> bits_from_bytes(const std::vector<uint8_t>& bytes) {
  std::vector<uint8_t> bits;
  bits.reserve(bytes.size() * 8);
  for (uint8_t b : bytes)
    for (int i = 7; i >= 0; --i) bits.push_back((b >> i) & 1);
  return bits;
}

std::vector<uint8_t> bytes_from_bits(const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) bytes[i / 8] |= static_cast<uint8_t>(0x80u >> (i % 8));
  return bytes;
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t u = 0;
  std::memcpy(&u, &v, 4);
  put_u32(out, u);
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  uint8_t u8() {
    if (pos + 1 > b.size()) fail(ErrorKind::io, "frame: truncated");
    return b[pos++];
  }
  uint16_t u16() { return static_cast<uint16_t>(u8() | (u8() << 8)); }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t u = u32();
    float v = 0;
    std::memcpy(&v, &u, 4);
    return v;
  }
};

Tensor run_fd_head(const Params& params, const Tensor& padded) {
  Params copy = params;
  Graph g;
  Binder bind(g, copy);
  return fd_forward(g, bind, g.constant(padded)).tensor().clone();
}

}  // namespace

BandwidthAllocation allocate(const RateReport& rates, double eta,
                             const std::vector<int>& q_levels) {
  if (!(eta > 0) || !std::isfinite(eta))
    fail(ErrorKind::config, "allocate: eta must be positive and finite");
  const std::vector<int> levels = level_candidates(q_levels);
  BandwidthAllocation a;
  a.eta = eta;
  a.q_levels = q_levels;
  a.k_bar.reserve(rates.per_patch_bits.size());
  for (double bits : rates.per_patch_bits) {
    const double target = eta * bits;
    int best = levels.front();
    for (int c : levels) {
      const double dc = std::abs(target - c), db = std::abs(target - best);
      if (dc < db || (dc == db && c > best)) best = c;
    }
    a.k_bar.push_back(best);
  }
  return a;
}

double compute_cbr(int64_t n_total, int64_t m) {
  if (m <= 0) fail(ErrorKind::config, "compute_cbr: source dimension must be positive");
  return static_cast<double>(n_total) / static_cast<double>(m);
}

int64_t side_symbol_count(const McsEntry& mcs, int64_t bits) {
  const int64_t info_bits_num = static_cast<int64_t>(bits_per_symbol(mcs.mod)) * mcs.rate_num;
  return (bits * mcs.rate_den + info_bits_num - 1) / info_bits_num;
}

void init_jscc_params(Params& p, const CodecShape& s, uint64_t seed) {
  ensure_dense_param(p, "fe/d1", s.dv, 64, seed);
  ensure_dense_param(p, "fe/d2", 64, 64, seed);
  ensure_dense_param(p, "fe/out", 64, kHeadWidth, seed);
  ensure_dense_param(p, "fd/d1", kHeadWidth, 64, seed);
  ensure_dense_param(p, "fd/d2", 64, 64, seed);
  ensure_dense_param(p, "fd/out", 64, s.dv, seed);
}

Value fe_forward(Graph& g, Binder& bind, Value residual) {
  Value x = g.leaky_relu(dense_layer(g, bind, "fe/d1", residual), kSlope);
  x = g.leaky_relu(dense_layer(g, bind, "fe/d2", x), kSlope);
  return dense_layer(g, bind, "fe/out", x);
}

Value fd_forward(Graph& g, Binder& bind, Value padded) {
  Value x = g.leaky_relu(dense_layer(g, bind, "fd/d1", padded), kSlope);
  x = g.leaky_relu(dense_layer(g, bind, "fd/d2", x), kSlope);
  return dense_layer(g, bind, "fd/out", x);
}

Tensor alloc_real_mask(const BandwidthAllocation& a) {
  const int64_t P = static_cast<int64_t>(a.k_bar.size());
  Tensor m = Tensor::zeros(Shape{P, kHeadWidth});
  auto d = m.mutable_data();
  for (int64_t i = 0; i < P; ++i) {
    const int k = a.k_bar[static_cast<size_t>(i)];
    if (k < 0 || k > kKMax) fail(ErrorKind::config, "allocation exceeds the head width");
    for (int j = 0; j < 2 * k; ++j) d[i * kHeadWidth + j] = 1.0f;
  }
  return m;
}

Tensor alloc_patch_mask(const BandwidthAllocation& a) {
  const int64_t P = static_cast<int64_t>(a.k_bar.size());
  Tensor m = Tensor::zeros(Shape{P, 1});
  for (int64_t i = 0; i < P; ++i)
    m.mutable_data()[i] = a.k_bar[static_cast<size_t>(i)] > 0 ? 1.0f : 0.0f;
  return m;
}

Value power_normalize(Graph& g, Value masked, int64_t n_complex) {
  if (n_complex <= 0) fail(ErrorKind::config, "power_normalize: no charged symbols");
  Value energy = g.reduce_sum(g.mul(masked, masked));
  Value scale = g.sqrt(g.scale(g.reciprocal(energy), static_cast<float>(n_complex)));
  return g.mul(masked, scale);
}

Tensor quantize_z(const Tensor& z) {
  Tensor out = z.clone();
  auto d = out.mutable_data();
  for (int64_t i = 0; i < out.numel(); ++i) d[i] = dequantize_z_scalar(quantize_z_scalar(d[i]));
  return out;
}

std::vector<uint8_t> make_side_bits(const Tensor& z, float eta) {
  std::vector<uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(z.numel()) + 6);
  for (int64_t i = 0; i < z.numel(); ++i) bytes.push_back(quantize_z_scalar(z.data()[i]));
  put_f32(bytes, eta);
  const uint16_t crc = crc16_ccitt(bytes.data(), bytes.size());
  bytes.push_back(static_cast<uint8_t>(crc >> 8));
  bytes.push_back(static_cast<uint8_t>(crc & 0xff));
  return bits_from_bytes(bytes);
}

SideInfo parse_side_bits(const std::vector<uint8_t>& bits, const CodecShape& s) {
  SideInfo info;
  const size_t expect = (static_cast<size_t>(s.dz) + 6) * 8;
  if (bits.size() != expect) fail(ErrorKind::io, "side info: wrong length");
  std::vector<uint8_t> bytes = bytes_from_bits(bits);
  const size_t body = static_cast<size_t>(s.dz) + 4;
  const uint16_t want = static_cast<uint16_t>((bytes[body] << 8) | bytes[body + 1]);
  info.crc_ok = crc16_ccitt(bytes.data(), body) == want;
  info.z = Tensor::zeros(Shape{s.zd, s.zh, s.zw, s.zc});
  for (int64_t i = 0; i < s.dz; ++i)
    info.z.mutable_data()[i] = dequantize_z_scalar(bytes[static_cast<size_t>(i)]);
  Reader r{bytes, body - 4};
  info.eta = r.f32();
  return info;
}

ChannelFrame jscc_encode(const Params& params, const Tensor& grid, const CodecShape& s,
                         const JsccConfig& cfg) {
  Tensor va = run_analysis(params, grid, s);
  Tensor z = run_hyper_encode(params, va, s);
  Tensor zq = quantize_z(z);
  auto [mu, sigma] = run_hyper_decode(params, zq, s);
  const float eta32 = static_cast<float>(cfg.eta);

  ChannelFrame f;
  f.alloc = allocate(expected_rate_report(sigma), static_cast<double>(eta32), cfg.q_levels);
  f.side_bits = make_side_bits(zq, eta32);
  f.n_payload = f.alloc.n_payload();
  f.n_total = f.n_payload + side_symbol_count(cfg.side_mcs, static_cast<int64_t>(f.side_bits.size()));

  Params copy = params;
  Graph g;
  Binder bind(g, copy);
  Value v = as_patches(g, g.constant(va), s);
  Value residual = g.sub(v, g.constant(mu));
  Value head = g.mul(fe_forward(g, bind, residual), g.constant(alloc_real_mask(f.alloc)));
  if (f.n_payload > 0) head = power_normalize(g, head, f.n_payload);
  const Tensor& ht = head.tensor();
  f.payload_iq.reserve(static_cast<size_t>(2 * f.n_payload));
  for (int64_t i = 0; i < s.P; ++i)
    for (int j = 0; j < 2 * f.alloc.k_bar[static_cast<size_t>(i)]; ++j)
      f.payload_iq.push_back(ht.data()[i * kHeadWidth + j]);
  return f;
}

ChannelFrame apply_channel(const ChannelFrame& tx, const JsccConfig& cfg, double snr_true_db,
                           double snr_est_db, Rng& rng) {
  ChannelFrame rx = tx;
  std::vector<cplx> sym(static_cast<size_t>(tx.n_payload));
  for (size_t i = 0; i < sym.size(); ++i)
    sym[i] = cplx(tx.payload_iq[2 * i], tx.payload_iq[2 * i + 1]);
  std::vector<cplx> noisy = awgn(sym, snr_true_db, rng);
  for (size_t i = 0; i < noisy.size(); ++i) {
    rx.payload_iq[2 * i] = static_cast<float>(noisy[i].real());
    rx.payload_iq[2 * i + 1] = static_cast<float>(noisy[i].imag());
  }
  rx.side_bits = send_bits_digital(tx.side_bits, cfg.side_mcs, snr_true_db, snr_est_db, rng);
  return rx;
}

Tensor jscc_decode(const Params& params, const ChannelFrame& rx, const CodecShape& s,
                   const JsccConfig& cfg) {
  SideInfo side = parse_side_bits(rx.side_bits, s);
  if (!side.crc_ok) fail(ErrorKind::io, "side info: crc mismatch");
  auto [mu, sigma] = run_hyper_decode(params, side.z, s);
  BandwidthAllocation alloc =
      allocate(expected_rate_report(sigma), static_cast<double>(side.eta), cfg.q_levels);
  if (rx.payload_iq.size() != static_cast<size_t>(2 * alloc.n_payload()))
    fail(ErrorKind::io, "frame: payload length does not match the derived allocation");

  Tensor padded = Tensor::zeros(Shape{s.P, kHeadWidth});
  size_t pos = 0;
  for (int64_t i = 0; i < s.P; ++i)
    for (int j = 0; j < 2 * alloc.k_bar[static_cast<size_t>(i)]; ++j)
      padded.mutable_data()[i * kHeadWidth + j] = rx.payload_iq[pos++];

  Tensor head = run_fd_head(params, padded);
  Tensor vhat = mu.clone();
  const Tensor pm = alloc_patch_mask(alloc);
  for (int64_t i = 0; i < s.P; ++i) {
    if (pm.data()[i] == 0.0f) continue;
    for (int64_t j = 0; j < s.dv; ++j)
      vhat.mutable_data()[i * s.dv + j] += head.data()[i * s.dv + j];
  }
  return vhat;
}

std::vector<uint8_t> serialize_frame(const ChannelFrame& f, const JsccConfig& cfg) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'N', 'F', 'R', 'M'});
  put_u32(out, static_cast<uint32_t>(f.alloc.k_bar.size()));
  for (int k : f.alloc.k_bar) {
    auto it = std::find(cfg.q_levels.begin(), cfg.q_levels.end(), k);
    if (it == cfg.q_levels.end())
      fail(ErrorKind::io, "frame: allocation uses an unknown bandwidth level");
    out.push_back(static_cast<uint8_t>(it - cfg.q_levels.begin()));
  }
  put_u16(out, static_cast<uint16_t>(f.side_bits.size()));
  const std::vector<uint8_t> packed = bytes_from_bits(f.side_bits);
  out.insert(out.end(), packed.begin(), packed.end());
  for (float v : f.payload_iq) put_f32(out, v);
  return out;
}

ChannelFrame deserialize_frame(const std::vector<uint8_t>& bytes, const JsccConfig& cfg) {
  Reader r{bytes};
  if (bytes.size() < 4 || bytes[0] != 'N' || bytes[1] != 'F' || bytes[2] != 'R' || bytes[3] != 'M')
    fail(ErrorKind::io, "frame: bad magic");
  r.pos = 4;
  ChannelFrame f;
  const uint32_t P = r.u32();
  f.alloc.q_levels = cfg.q_levels;
  f.alloc.k_bar.reserve(P);
  for (uint32_t i = 0; i < P; ++i) {
    const uint8_t idx = r.u8();
    if (idx >= cfg.q_levels.size()) fail(ErrorKind::io, "frame: bandwidth level index out of range");
    f.alloc.k_bar.push_back(cfg.q_levels[idx]);
  }
  const uint16_t nbits = r.u16();
  const size_t nbytes = (static_cast<size_t>(nbits) + 7) / 8;
  if (r.pos + nbytes > bytes.size()) fail(ErrorKind::io, "frame: truncated");
  std::vector<uint8_t> packed(bytes.begin() + static_cast<long>(r.pos),
                              bytes.begin() + static_cast<long>(r.pos + nbytes));
  r.pos += nbytes;
  std::vector<uint8_t> bits = bits_from_bytes(packed);
  bits.resize(nbits);
  f.side_bits = std::move(bits);
  f.n_payload = f.alloc.n_payload();
  const size_t want = static_cast<size_t>(2 * f.n_payload) * 4;
  if (bytes.size() - r.pos != want) fail(ErrorKind::io, "frame: payload length mismatch");
  f.payload_iq.reserve(static_cast<size_t>(2 * f.n_payload));
  for (int64_t i = 0; i < 2 * f.n_payload; ++i) f.payload_iq.push_back(r.f32());
  f.n_total =
      f.n_payload + side_symbol_count(cfg.side_mcs, static_cast<int64_t>(f.side_bits.size()));
  return f;
}

}  // namespace voxelcom
