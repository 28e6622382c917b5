#include <cmath>
#include <string>

#include "voxelcom/codec.hpp"

namespace voxelcom {
namespace {

constexpr float kSlope = 0.01f;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Nearest-source index map for a gather-based upsample of [sd,sh,sw,C]
// (flattened rows) to [dd,dh,dw]; factor is the nominal stride ratio.
std::vector<int64_t> upsample_idx(int sd, int sh, int sw, int dd, int dh, int dw, int factor) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(dd) * dh * dw);
  for (int d = 0; d < dd; ++d)
    for (int h = 0; h < dh; ++h)
      for (int w = 0; w < dw; ++w) {
        int64_t s = (static_cast<int64_t>(std::min(sd - 1, d / factor)) * sh +
                     std::min(sh - 1, h / factor)) *
                        sw +
                    std::min(sw - 1, w / factor);
        idx.push_back(s);
      }
  return idx;
}

Value upsample(Graph& g, Value x, int dd, int dh, int dw, int factor) {
  const Shape& s = x.shape();
  int64_t c = s[3];
  Value flat = g.reshape(x, Shape{s[0] * s[1] * s[2], c});
  Value up = g.gather_rows(flat, upsample_idx(static_cast<int>(s[0]), static_cast<int>(s[1]),
                                              static_cast<int>(s[2]), dd, dh, dw, factor));
  return g.reshape(up, Shape{dd, dh, dw, c});
}

Tensor selector(int64_t rows, int64_t cols, int64_t offset) {
  Tensor t = Tensor::zeros(Shape{rows, cols});
  auto d = t.mutable_data();
  for (int64_t j = 0; j < cols; ++j) d[(offset + j) * cols + j] = 1.f;
  return t;
}

void check_grid(const Tensor& t, int D, int H, int W, int C, const char* who) {
  const Shape& s = t.shape();
  if (s.rank() != 4 || s[0] != D || s[1] != H || s[2] != W || s[3] != C)
    fail(ErrorKind::shape, std::string(who) + ": grid shape does not match codec configuration");
}

double phi(double x) { return 0.5 * std::erfc(-x * (1.0 / std::sqrt(2.0))); }

double bin_mass(double v, double mu, double sigma) {
  double d = v - mu;
  return phi((d + 0.5) / sigma) - phi((d - 0.5) / sigma);
}

}  // namespace

CodecShape CodecShape::from_grid(int D, int H, int W, int C) {
  if (D <= 0 || H <= 0 || W <= 0)
    fail(ErrorKind::config, "codec: grid dims must be positive");
  if (D % 4 || H % 4 || W % 4)
    fail(ErrorKind::config,
         "codec: grid dims must be divisible by 4 (pad to the next multiple of 4)");
  if (C < 1 || C > 16) fail(ErrorKind::config, "codec: channels must be in [1,16]");
  CodecShape s;
  s.D = D;
  s.H = H;
  s.W = W;
  s.C = C;
  s.pd = D / 4;
  s.ph = H / 4;
  s.pw = W / 4;
  s.P = s.pd * s.ph * s.pw;
  s.dv = 8 * C;
  s.zd = ceil_div(s.pd, 4);
  s.zh = ceil_div(s.ph, 4);
  s.zw = ceil_div(s.pw, 4);
  s.dz = s.zd * s.zh * s.zw * s.zc;
  return s;
}

Params init_codec_params(const CodecShape& s, uint64_t seed) {
  Params p;
  ensure_conv_param(p, "ga/c1", 3, s.C, 16, seed);
  ensure_conv_param(p, "ga/c2", 3, 16, s.C, seed);
  ensure_conv_param(p, "gs/c1", 3, s.C, 16, seed);
  ensure_conv_param(p, "gs/c2", 3, 16, s.C, seed);
  ensure_conv_param(p, "ha/c1", 3, s.dv, 16, seed);
  ensure_conv_param(p, "ha/c2", 3, 16, s.zc, seed);
  ensure_conv_param(p, "hs/c1", 3, s.zc, 16, seed);
  ensure_conv_param(p, "hs/c2", 3, 16, 32, seed);
  ensure_conv_param(p, "hs/c3", 3, 32, 2 * s.dv, seed);
  p.emplace("zprior/theta", Tensor::zeros(Shape{s.dz, kPriorKnots}));
  return p;
}

Value analysis(Graph& g, Binder& bind, Value grid, const CodecShape& s) {
  check_grid(grid.tensor(), s.D, s.H, s.W, s.C, "analysis");
  Value x = g.leaky_relu(conv_layer(g, bind, "ga/c1", grid, 2), kSlope);
  x = g.leaky_relu(conv_layer(g, bind, "ga/c2", x, 1), kSlope);
  return g.patch_merge(x, {2, 2, 2});
}

Value synthesis(Graph& g, Binder& bind, Value vgrid, const CodecShape& s) {
  check_grid(vgrid.tensor(), s.pd, s.ph, s.pw, s.dv, "synthesis");
  Value y = g.patch_split(vgrid, {2, 2, 2});
  y = g.leaky_relu(conv_layer(g, bind, "gs/c1", y, 1), kSlope);
  y = upsample(g, y, s.D, s.H, s.W, 2);
  return conv_layer(g, bind, "gs/c2", y, 1);
}

Value hyper_encode(Graph& g, Binder& bind, Value vgrid, const CodecShape& s) {
  check_grid(vgrid.tensor(), s.pd, s.ph, s.pw, s.dv, "hyper_encode");
  Value x = g.leaky_relu(conv_layer(g, bind, "ha/c1", vgrid, 2), kSlope);
  return conv_layer(g, bind, "ha/c2", x, 2);
}

MuSigma hyper_decode(Graph& g, Binder& bind, Value z, const CodecShape& s) {
  check_grid(z.tensor(), s.zd, s.zh, s.zw, s.zc, "hyper_decode");
  Value y = g.leaky_relu(conv_layer(g, bind, "hs/c1", z, 1), kSlope);
  y = g.leaky_relu(conv_layer(g, bind, "hs/c2", y, 1), kSlope);
  y = upsample(g, y, s.pd, s.ph, s.pw, 4);
  y = conv_layer(g, bind, "hs/c3", y, 1);
  Value flat = g.reshape(y, Shape{s.P, 2 * s.dv});
  Value mu = g.matmul(flat, g.constant(selector(2 * s.dv, s.dv, 0)));
  Value raw = g.matmul(flat, g.constant(selector(2 * s.dv, s.dv, s.dv)));
  Value sigma = g.shift(g.softplus(raw), static_cast<float>(kSigmaMin));
  return {mu, sigma};
}

Value as_patches(Graph& g, Value vgrid, const CodecShape& s) {
  return g.reshape(vgrid, Shape{s.P, s.dv});
}

Value as_grid(Graph& g, Value patches, const CodecShape& s) {
  return g.reshape(patches, Shape{s.pd, s.ph, s.pw, s.dv});
}

Value gaussian_bin_p(Graph& g, Value v, Value mu, Value sigma) {
  Value rs = g.reciprocal(sigma);
  Value d = g.sub(v, mu);
  Value hi = g.normal_cdf(g.mul(g.shift(d, 0.5f), rs));
  Value lo = g.normal_cdf(g.mul(g.shift(d, -0.5f), rs));
  Value p = g.sub(hi, lo);
  return g.shift(g.scale(p, static_cast<float>(1.0 - kPMin)), static_cast<float>(kPMin));
}

Value z_bin_p(Graph& g, Binder& bind, Value ztilde, const CodecShape& s) {
  Value zv = g.reshape(ztilde, Shape{s.dz, 1});
  Value sp = g.softplus(bind("zprior/theta"));
  Value rows = g.matmul(sp, g.constant(Tensor::full(Shape{kPriorKnots, 1}, 1.f)));
  Value w = g.mul(sp, g.reciprocal(rows));

  const double step = (kPriorHi - kPriorLo) / kPriorKnots;
  auto cdf = [&](Value x) {
    Value acc;
    for (int j = 0; j < kPriorKnots; ++j) {
      Tensor e = Tensor::zeros(Shape{kPriorKnots, 1});
      e.mutable_data()[j] = 1.f;
      Value wj = g.matmul(w, g.constant(e));
      double knot = kPriorLo + j * step;
      Value seg = g.clamp01(g.scale(g.shift(x, static_cast<float>(-knot)),
                                    static_cast<float>(1.0 / step)));
      Value term = g.mul(wj, seg);
      acc = j == 0 ? term : g.add(acc, term);
    }
    return acc;
  };
  Value p = g.sub(cdf(g.shift(zv, 0.5f)), cdf(g.shift(zv, -0.5f)));
  return g.shift(g.scale(p, static_cast<float>(1.0 - kPMin)), static_cast<float>(kPMin));
}

Value bits_of_p(Graph& g, Value p) {
  return g.scale(g.reduce_sum(g.log(p)), static_cast<float>(-1.0 / std::log(2.0)));
}

double likelihood(double v, double mu, double sigma) {
  if (sigma <= 0) fail(ErrorKind::config, "likelihood: sigma must be positive");
  return bin_mass(v, mu, sigma) * (1.0 - kPMin) + kPMin;
}

double expected_bits_per_dim(double sigma) {
  if (sigma <= 0) fail(ErrorKind::config, "expected_bits_per_dim: sigma must be positive");
  // 8-point Gauss-Legendre nodes/weights on [-1,1].
  static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                               -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                               0.7966664774136267,  0.9602898564975363};
  static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                               0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                               0.2223810344533745, 0.1012285362903763};
  const double L = 8.0 * sigma + 2.0;
  const int panels = 96;
  const double h = 2.0 * L / panels;
  const double inv_ln2 = 1.0 / std::log(2.0);
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    double a = -L + p * h;
    double mid = a + 0.5 * h;
    for (int q = 0; q < 8; ++q) {
      double t = mid + 0.5 * h * gx[q];
      double mass = bin_mass(t, 0.0, sigma);
      if (mass <= 0) continue;
      double peff = mass * (1.0 - kPMin) + kPMin;
      acc += gw[q] * 0.5 * h * mass * (-std::log(peff) * inv_ln2);
    }
  }
  return acc;
}

RateReport rate_report(const Tensor& v, const Tensor& mu, const Tensor& sigma) {
  const Shape& s = v.shape();
  if (s.rank() != 2 || mu.shape() != s || sigma.shape() != s)
    fail(ErrorKind::shape, "rate_report: v, mu, sigma must share a [P,d] shape");
  const int64_t P = s[0], d = s[1];
  auto pv = v.data();
  auto pm = mu.data();
  auto ps = sigma.data();
  RateReport r;
  r.per_patch_bits.resize(static_cast<size_t>(P));
  const double inv_ln2 = 1.0 / std::log(2.0);
  for (int64_t i = 0; i < P; ++i) {
    double bits = 0;
    for (int64_t j = 0; j < d; ++j) {
      int64_t k = i * d + j;
      bits += -std::log(likelihood(pv[k], pm[k], ps[k])) * inv_ln2;
    }
    r.per_patch_bits[static_cast<size_t>(i)] = bits;
    r.r_v += bits;
  }
  return r;
}

RateReport expected_rate_report(const Tensor& sigma) {
  const Shape& s = sigma.shape();
  if (s.rank() != 2) fail(ErrorKind::shape, "expected_rate_report: sigma must be [P,d]");
  const int64_t P = s[0], d = s[1];
  auto ps = sigma.data();
  RateReport r;
  r.per_patch_bits.resize(static_cast<size_t>(P));
  for (int64_t i = 0; i < P; ++i) {
    double bits = 0;
    for (int64_t j = 0; j < d; ++j) bits += expected_bits_per_dim(ps[i * d + j]);
    r.per_patch_bits[static_cast<size_t>(i)] = bits;
    r.r_v += bits;
  }
  return r;
}

double z_bits(const Params& params, const Tensor& z, const CodecShape& s) {
  Params copy = params;
  Graph g;
  Binder bind(g, copy);
  Value p = z_bin_p(g, bind, g.constant(z), s);
  double sum_log = g.scalar_f64(g.reduce_sum(g.log(p)));
  return -sum_log / std::log(2.0);
}

Tensor run_analysis(const Params& p, const Tensor& grid, const CodecShape& s) {
  Params copy = p;
  Graph g;
  Binder bind(g, copy);
  return analysis(g, bind, g.constant(grid), s).tensor().clone();
}

Tensor run_synthesis(const Params& p, const Tensor& vgrid, const CodecShape& s) {
  Params copy = p;
  Graph g;
  Binder bind(g, copy);
  return synthesis(g, bind, g.constant(vgrid), s).tensor().clone();
}

Tensor run_hyper_encode(const Params& p, const Tensor& vgrid, const CodecShape& s) {
  Params copy = p;
  Graph g;
  Binder bind(g, copy);
  return hyper_encode(g, bind, g.constant(vgrid), s).tensor().clone();
}

std::pair<Tensor, Tensor> run_hyper_decode(const Params& p, const Tensor& z, const CodecShape& s) {
  Params copy = p;
  Graph g;
  Binder bind(g, copy);
  MuSigma ms = hyper_decode(g, bind, g.constant(z), s);
  return {ms.mu.tensor().clone(), ms.sigma.tensor().clone()};
}

}  // namespace voxelcom
