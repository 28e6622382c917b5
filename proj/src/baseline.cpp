#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "voxelcom/baseline.hpp"

namespace voxelcom {
namespace {

int index_bits(int64_t K) {
  int b = 0;
  while ((int64_t{1} << b) < K) ++b;
  return std::max(b, 1);
}

int64_t nearest_row(const Tensor& cb, const float* x, int64_t d) {
  const int64_t K = cb.shape()[0];
  const auto c = cb.data();
  int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < K; ++k) {
    double dist = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double e = static_cast<double>(x[j]) - c[k * d + j];
      dist += e * e;
    }
    if (dist < best_d) {
      best_d = dist;
      best = k;
    }
  }
  return best;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::vector<uint8_t>& b, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

}  // namespace

Tensor blockify(const Tensor& grid) {
  const Shape& s = grid.shape();
  if (s.rank() != 4 || s[0] % 2 || s[1] % 2 || s[2] % 2)
    fail(ErrorKind::shape, "blockify: grid must be [D,H,W,C] with even spatial dims");
  const int64_t D = s[0], H = s[1], W = s[2], C = s[3];
  const int64_t N = (D / 2) * (H / 2) * (W / 2);
  Tensor out = Tensor::zeros(Shape{N, 8 * C});
  auto dst = out.mutable_data();
  auto src = grid.data();
  int64_t n = 0;
  for (int64_t bd = 0; bd < D / 2; ++bd)
    for (int64_t bh = 0; bh < H / 2; ++bh)
      for (int64_t bw = 0; bw < W / 2; ++bw, ++n) {
        int64_t j = 0;
        for (int64_t dz = 0; dz < 2; ++dz)
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx)
              for (int64_t c = 0; c < C; ++c, ++j)
                dst[n * 8 * C + j] =
                    src[(((bd * 2 + dz) * H + bh * 2 + dy) * W + bw * 2 + dx) * C + c];
      }
  return out;
}

Tensor unblockify(const Tensor& blocks, const Shape& grid_shape) {
  const int64_t D = grid_shape[0], H = grid_shape[1], W = grid_shape[2], C = grid_shape[3];
  const int64_t N = (D / 2) * (H / 2) * (W / 2);
  if (blocks.shape() != Shape{N, 8 * C})
    fail(ErrorKind::shape, "unblockify: block tensor does not match the grid shape");
  Tensor out = Tensor::zeros(grid_shape);
  auto dst = out.mutable_data();
  auto src = blocks.data();
  int64_t n = 0;
  for (int64_t bd = 0; bd < D / 2; ++bd)
    for (int64_t bh = 0; bh < H / 2; ++bh)
      for (int64_t bw = 0; bw < W / 2; ++bw, ++n) {
        int64_t j = 0;
        for (int64_t dz = 0; dz < 2; ++dz)
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx)
              for (int64_t c = 0; c < C; ++c, ++j)
                dst[(((bd * 2 + dz) * H + bh * 2 + dy) * W + bw * 2 + dx) * C + c] =
                    src[n * 8 * C + j];
      }
  return out;
}

VqCodebook vq_train(const Tensor& samples, int64_t K, int iters, uint64_t seed) {
  const Shape& s = samples.shape();
  if (s.rank() != 2) fail(ErrorKind::shape, "vq_train: samples must be [N,d]");
  const int64_t N = s[0], d = s[1];
  if (K < 1) fail(ErrorKind::config, "vq_train: K must be >= 1");
  if (N < K) fail(ErrorKind::prerequisite, "vq_train: need at least K samples");
  auto x = samples.data();
  Rng rng = Rng::derive(seed, "vq/train");

  // k-means++ seeding.
  Tensor cb = Tensor::zeros(Shape{K, d});
  auto c = cb.mutable_data();
  std::vector<double> d2(static_cast<size_t>(N), std::numeric_limits<double>::infinity());
  int64_t first = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(N)));
  for (int64_t j = 0; j < d; ++j) c[j] = x[first * d + j];
  for (int64_t k = 1; k < K; ++k) {
    double total = 0;
    for (int64_t i = 0; i < N; ++i) {
      double dist = 0;
      for (int64_t j = 0; j < d; ++j) {
        const double e = static_cast<double>(x[i * d + j]) - c[(k - 1) * d + j];
        dist += e * e;
      }
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], dist);
      total += d2[static_cast<size_t>(i)];
    }
    int64_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total, acc = 0;
      for (int64_t i = 0; i < N; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(N)));
    }
    for (int64_t j = 0; j < d; ++j) c[k * d + j] = x[pick * d + j];
  }

  VqCodebook book{cb, K, d};
  std::vector<int64_t> assign(static_cast<size_t>(N));
  std::vector<double> dist_to_centroid(static_cast<size_t>(N));
  double prev_mse = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    double mse = 0;
    for (int64_t i = 0; i < N; ++i) {
      const int64_t a = nearest_row(book.vectors, &x[i * d], d);
      assign[static_cast<size_t>(i)] = a;
      double dist = 0;
      for (int64_t j = 0; j < d; ++j) {
        const double e = static_cast<double>(x[i * d + j]) - book.vectors.data()[a * d + j];
        dist += e * e;
      }
      dist_to_centroid[static_cast<size_t>(i)] = dist;
      mse += dist;
    }
    mse /= static_cast<double>(N * d);
    if (mse > prev_mse + 1e-12) break;  // converged (float plateau)
    prev_mse = mse;

    std::vector<double> sums(static_cast<size_t>(K * d), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(K), 0);
    for (int64_t i = 0; i < N; ++i) {
      const int64_t a = assign[static_cast<size_t>(i)];
      counts[static_cast<size_t>(a)] += 1;
      for (int64_t j = 0; j < d; ++j)
        sums[static_cast<size_t>(a * d + j)] += x[i * d + j];
    }
    auto cw = book.vectors.mutable_data();
    for (int64_t k = 0; k < K; ++k) {
      if (counts[static_cast<size_t>(k)] == 0) {
        // Re-seed a dead centroid from the worst represented sample.
        int64_t far = 0;
        double far_d = -1;
        for (int64_t i = 0; i < N; ++i)
          if (dist_to_centroid[static_cast<size_t>(i)] > far_d) {
            far_d = dist_to_centroid[static_cast<size_t>(i)];
            far = i;
          }
        for (int64_t j = 0; j < d; ++j) cw[k * d + j] = x[far * d + j];
        dist_to_centroid[static_cast<size_t>(far)] = -1;
        continue;
      }
      for (int64_t j = 0; j < d; ++j)
        cw[k * d + j] = static_cast<float>(sums[static_cast<size_t>(k * d + j)] /
                                           static_cast<double>(counts[static_cast<size_t>(k)]));
    }
  }
  return book;
}

std::vector<int64_t> vq_apply(const Tensor& samples, const VqCodebook& cb) {
  const Shape& s = samples.shape();
  if (s.rank() != 2 || s[1] != cb.d) fail(ErrorKind::shape, "vq_apply: dimension mismatch");
  std::vector<int64_t> idx(static_cast<size_t>(s[0]));
  for (int64_t i = 0; i < s[0]; ++i)
    idx[static_cast<size_t>(i)] = nearest_row(cb.vectors, &samples.data()[i * cb.d], cb.d);
  return idx;
}

Tensor vq_reconstruct(const std::vector<int64_t>& indices, const VqCodebook& cb) {
  Tensor out = Tensor::zeros(Shape{static_cast<int64_t>(indices.size()), cb.d});
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= cb.K)
      fail(ErrorKind::config, "vq_reconstruct: index out of range");
    for (int64_t j = 0; j < cb.d; ++j)
      out.mutable_data()[static_cast<int64_t>(i) * cb.d + j] =
          cb.vectors.data()[indices[i] * cb.d + j];
  }
  return out;
}

double vq_mse(const Tensor& samples, const VqCodebook& cb) {
  const auto idx = vq_apply(samples, cb);
  const Tensor rec = vq_reconstruct(idx, cb);
  double acc = 0;
  for (int64_t i = 0; i < samples.numel(); ++i) {
    const double e = static_cast<double>(samples.data()[i]) - rec.data()[i];
    acc += e * e;
  }
  return acc / static_cast<double>(samples.numel());
}

std::vector<uint8_t> serialize_digital(const std::vector<int64_t>& indices,
                                       const VqCodebook& cb) {
  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), {'V', 'Q', 'B', 'S'});
  put_u32(bytes, static_cast<uint32_t>(cb.K));
  put_u32(bytes, static_cast<uint32_t>(cb.d));
  put_u32(bytes, static_cast<uint32_t>(indices.size()));
  const uint16_t crc = crc16_ccitt(bytes.data(), bytes.size());
  bytes.push_back(static_cast<uint8_t>(crc >> 8));
  bytes.push_back(static_cast<uint8_t>(crc & 0xff));
  for (int64_t i = 0; i < cb.K * cb.d; ++i) {
    uint32_t u = 0;
    const float v = cb.vectors.data()[i];
    std::memcpy(&u, &v, 4);
    put_u32(bytes, u);
  }

  std::vector<uint8_t> bits;
  bits.reserve(bytes.size() * 8 + indices.size() * 8);
  for (uint8_t b : bytes)
    for (int i = 7; i >= 0; --i) bits.push_back((b >> i) & 1);
  const int ib = index_bits(cb.K);
  for (int64_t v : indices) {
    if (v < 0 || v >= cb.K) fail(ErrorKind::config, "serialize_digital: index out of range");
    for (int i = ib - 1; i >= 0; --i) bits.push_back(static_cast<uint8_t>((v >> i) & 1));
  }
  return bits;
}

VqParse deserialize_digital(const std::vector<uint8_t>& bits) {
  VqParse out;
  const size_t header_bits = 18 * 8;
  if (bits.size() < header_bits) return out;
  auto read_byte = [&](size_t byte_pos) {
    uint8_t b = 0;
    for (int i = 0; i < 8; ++i) b = static_cast<uint8_t>((b << 1) | bits[byte_pos * 8 + i]);
    return b;
  };
  std::vector<uint8_t> header(18);
  for (size_t i = 0; i < 18; ++i) header[i] = read_byte(i);
  const uint16_t want = static_cast<uint16_t>((header[16] << 8) | header[17]);
  if (header[0] != 'V' || header[1] != 'Q' || header[2] != 'B' || header[3] != 'S' ||
      crc16_ccitt(header.data(), 16) != want)
    return out;
  const int64_t K = get_u32(header, 4);
  const int64_t d = get_u32(header, 8);
  const int64_t N = get_u32(header, 12);
  const int ib = index_bits(K);
  const size_t want_bits = header_bits + static_cast<size_t>(K * d) * 32 +
                           static_cast<size_t>(N) * static_cast<size_t>(ib);
  if (K < 1 || d < 1 || bits.size() != want_bits) return out;
  out.header_ok = true;

  out.cb.K = K;
  out.cb.d = d;
  out.cb.vectors = Tensor::zeros(Shape{K, d});
  size_t pos = header_bits;
  for (int64_t i = 0; i < K * d; ++i) {
    uint32_t u = 0;
    for (int byte = 0; byte < 4; ++byte) {
      uint8_t b = 0;
      for (int j = 0; j < 8; ++j) b = static_cast<uint8_t>((b << 1) | bits[pos++]);
      u |= static_cast<uint32_t>(b) << (8 * byte);
    }
    float v = 0;
    std::memcpy(&v, &u, 4);
    out.cb.vectors.mutable_data()[i] = v;
  }
  out.indices.resize(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    int64_t v = 0;
    for (int j = 0; j < ib; ++j) v = (v << 1) | bits[pos++];
    out.indices[static_cast<size_t>(i)] = std::min(v, K - 1);
  }
  return out;
}

SeparationResult run_separation(const Tensor& grid, const SeparationConfig& cfg,
                                double snr_true_db, double snr_est_db, Rng& rng) {
  SeparationResult res;
  res.mcs = select_mcs(cfg.mcs_table, snr_est_db);

  Tensor blocks = blockify(grid);
  VqCodebook cb = vq_train(blocks, cfg.K, cfg.iters, cfg.seed);
  std::vector<int64_t> idx = vq_apply(blocks, cb);
  std::vector<uint8_t> bits = serialize_digital(idx, cb);
  res.bits = static_cast<int64_t>(bits.size());
  res.n_total = digital_symbol_count(res.bits, res.mcs);

  std::vector<uint8_t> rx = send_bits_digital(bits, res.mcs, snr_true_db, snr_est_db, rng);
  VqParse parsed = deserialize_digital(rx);
  res.header_ok = parsed.header_ok;
  if (!parsed.header_ok || parsed.indices.size() != idx.size() || parsed.cb.d != cb.d) {
    res.fhat = Tensor::zeros(grid.shape());
    res.header_ok = false;
    return res;
  }
  // Corrupted codebook entries propagate into the reconstruction; the decoder
  // only sanitizes values the renderer cannot digest (NaN/inf and absurd
  // magnitudes from flipped exponent bits), the way any receiver clamps
  // decoded floats to its working range. Garbage stays garbage.
  for (int64_t i = 0; i < parsed.cb.vectors.numel(); ++i) {
    float& v = parsed.cb.vectors.mutable_data()[i];
    if (!std::isfinite(v)) v = 0.0f;
    v = std::clamp(v, -1e4f, 1e4f);
  }
  res.fhat = unblockify(vq_reconstruct(parsed.indices, parsed.cb), grid.shape());
  return res;
}

}  // namespace voxelcom
